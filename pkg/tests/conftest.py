import pytest

from popnet.data.fixture import FixtureSpec, generate_fixture
from popnet.pipeline import PopulationPipeline

from factories import SMALL_FIXTURE, make_config


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    """(inputs dir, truth dir) of a 10-CBG fixture region."""
    root = tmp_path_factory.mktemp("fixture")
    return generate_fixture(FixtureSpec(**SMALL_FIXTURE), str(root))


@pytest.fixture(scope="session")
def synthesized(small_fixture, tmp_path_factory):
    """(output dir, SynthesisSummary) after synthesize + network on the small fixture."""
    out = str(tmp_path_factory.mktemp("out"))
    pipeline = PopulationPipeline(make_config(small_fixture[0], out))
    summary = pipeline.synthesize()
    pipeline.network()
    return out, summary
