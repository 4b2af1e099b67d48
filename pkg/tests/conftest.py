import os

from hypothesis import HealthCheck, settings

# numba compilation makes the first example of a property slow.
settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))
