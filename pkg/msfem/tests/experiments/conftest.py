import pytest

SMALL_EXPERIMENT = {
    "example_id": "1",
    "epsilon": "1/8",
    "e0": "4",
    "coarse_h": "1/8,1/16",
    "fine_n": "64",
    "dt": "1/64",
    "t_final": "0.25",
    "series_times": "0.125",
    "keep_fraction": "1/4",
    "reference_fine_n": "128",
    "reference_dt": "1/128",
    "observer_stride": "4",
}


@pytest.fixture
def small_experiment(tmp_path):
    """A desk-sized Example 1 experiment that runs in a couple of seconds"""
    return {**SMALL_EXPERIMENT, "output_dir": str(tmp_path / "results")}


@pytest.fixture
def experiment_file(tmp_path, small_experiment):
    path = tmp_path / "small.env"
    path.write_text("".join(f"{key}={value}\n" for key, value in small_experiment.items()))
    return path
