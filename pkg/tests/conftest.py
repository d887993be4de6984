"""Shared fixtures: deterministic embedder, packaged scripted model, and
scenario skillbooks."""

from pathlib import Path

import pytest

from memo import dsl, simenv
from memo.config import MemoConfig
from memo.embedding import HashingEmbedder, embed_key
from memo.modelclient import ScriptedModel
from memo.skillbook import Guidance, Provenance, Skillbook, TemplateEntry

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "src" / "memo" / "assets" / "fixtures"

# Verdict lines recorded by the acceptance gate (tests/test_acceptance.py);
# echoed after the run so they survive pytest's output capture.
ACCEPTANCE_VERDICTS: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # pytest loads this file as top-level module "conftest" while the tests
    # import it as "tests.conftest"; read the list the tests appended to
    import sys

    module = sys.modules.get("tests.conftest")
    verdicts = getattr(module, "ACCEPTANCE_VERDICTS", None) or ACCEPTANCE_VERDICTS
    if not verdicts:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in verdicts:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def embedder():
    return HashingEmbedder()


@pytest.fixture()
def config():
    return MemoConfig()


@pytest.fixture()
def scripted_model():
    return ScriptedModel.from_files(sorted(FIXTURE_DIR.glob("*.yaml")))


@pytest.fixture()
def book(tmp_path, embedder):
    return Skillbook(embedder.dim, embedder.embedder_id, tmp_path / "book.jsonl")


def seed_pour_fixture_book(book, embedder):
    """Template (id 1) plus a misleading near-match guidance entry (id 2),
    the precondition of the clustering-rescue scenario."""
    spec = simenv.find_task("pour the can")
    scene = simenv.reset(spec).scene_graph()
    good = dsl.parse(
        'move_to(pose(0.3,0.2,0.06,0.0,0.0,0.0));\n'
        'grasp("can");\n'
        'move_to(pose(0.6,-0.1,0.3,0.0,0.0,0.0));\n'
        'move_to(pose(0.6,-0.1,0.3,2.0,0.0,0.0))'
    )
    tkey = embed_key(embedder, "pour", ("can", "bowl"))
    book.insert(
        tkey,
        TemplateEntry(dsl.templatize(good, scene, "pour_can")),
        Provenance("pour the can", "success"),
    )
    mkey = embed_key(embedder, "pour", ("can",))
    book.insert(
        mkey,
        Guidance("shake the can up and down vigorously to empty it"),
        Provenance("old session", "human"),
    )
    return book
