from app.scenarios.presets import PRESETS, preset_values

__all__ = ["PRESETS", "preset_values"]
