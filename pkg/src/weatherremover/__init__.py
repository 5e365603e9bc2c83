"""WeatherRemover restoration model, cost model and tooling."""
__version__ = "0.1.0"
