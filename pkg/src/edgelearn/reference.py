"""Access to the reference configs shipped with the package.

The thermal-comfort schema is a documented stand-in: the public
thermal-comfort datasets this framework targets do not pin an exact
feature list, so ``thermal_schema.json`` declares a minimal
(air_temp, humidity) -> preference layout that users remap their own
exports onto.
"""

from importlib import resources

REFERENCE_CONFIGS = (
    "thermal_schema.json",
    "thermal_job.json",
    "thermal5_synthetic.json",
)


def reference_text(name: str) -> str:
    """Return the text of a shipped reference config by file name."""
    if name not in REFERENCE_CONFIGS:
        raise KeyError(f"unknown reference config {name!r}; choose from {REFERENCE_CONFIGS}")
    return (resources.files("edgelearn") / "configs" / name).read_text(encoding="utf-8")
