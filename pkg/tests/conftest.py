import pytest

from formopt.study import Factor, ResponseSpec, StudyDefinition


@pytest.fixture
def lnp_study() -> StudyDefinition:
    """The worked four-lipid example: 4 mixture, 1 three-level categorical, 2 continuous."""
    return StudyDefinition(
        name="LNP",
        date="2022-09-02",
        factors=(
            Factor("PEG", "mixture", 0.01, 0.05, 0.0001),
            Factor("Helper", "mixture", 0.1, 0.6, 0.0001),
            Factor("Ionizable", "mixture", 0.1, 0.6, 0.0001),
            Factor("Cholesterol", "mixture", 0.1, 0.6, 0.0001),
            Factor("Ionizable Lipid Type", "categorical", levels=("H101", "H102", "H103")),
            Factor("N_P_ratio", "continuous", 6.0, 14.0, 1.0),
            Factor("flow rate", "continuous", 1.0, 3.0, 1.0),
        ),
        responses=(
            ResponseSpec("Potency", goal="maximize", importance=1.0),
            ResponseSpec("Size", goal="minimize", importance=0.2),
        ),
    )


BENCHMARK = {
    "PEG": 0.01,
    "Helper": 0.33,
    "Ionizable": 0.33,
    "Cholesterol": 0.33,
    "Ionizable Lipid Type": "H101",
    "N_P_ratio": 10.0,
    "flow rate": 1.0,
}


@pytest.fixture
def benchmark_settings() -> dict:
    return dict(BENCHMARK)
