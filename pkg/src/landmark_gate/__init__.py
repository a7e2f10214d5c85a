"""Quality gate for generated landmark heatmaps: MRF labeling, SSM plausibility
checks and localization metrics, plus DDPM schedule/sampling mathematics."""

__version__ = "0.1.0"
