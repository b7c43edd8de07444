"""Run manifest: config hash, stage timings, per-frame diagnostics, outputs."""

import os
import tempfile
from dataclasses import dataclass, field

import yaml


@dataclass
class RunManifest:
    config_hash: str = ""
    scale_k: float = None
    stages: dict = field(default_factory=dict)     # name -> seconds
    frames: list = field(default_factory=list)     # per-frame diagnostic dicts
    outputs: list = field(default_factory=list)    # relative paths

    def add_frame(self, frame, cloud):
        mom = cloud.total_momentum()
        self.frames.append({
            "frame": int(frame),
            "mass": float(cloud.total_mass()),
            "momentum": [float(v) for v in mom],
            "max_speed": float(cloud.max_speed()),
            "kinetic_energy": float(cloud.kinetic_energy()),
        })

    def record(self, relpath):
        if relpath not in self.outputs:
            self.outputs.append(relpath)

    def to_text(self):
        doc = {
            "config_hash": self.config_hash,
            "scale_k": self.scale_k,
            "stages": {k: float(v) for k, v in self.stages.items()},
            "frames": self.frames,
            "outputs": list(self.outputs),
        }
        return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)

    def write_atomic(self, path):
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(self.to_text())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def load_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    m = RunManifest(
        config_hash=doc.get("config_hash", ""),
        scale_k=doc.get("scale_k"),
        stages=doc.get("stages", {}) or {},
    )
    m.frames = doc.get("frames", []) or []
    m.outputs = doc.get("outputs", []) or []
    return m
