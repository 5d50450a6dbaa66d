import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from shapeparse.grammar import Action, ParseTree, apply_action, legal_rules, next_unexpanded
from shapeparse.raster import LabelGrid

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_grid(rng, w, h, p=0.5):
    labels = np.where(rng.random((h, w)) < p, 1, -1)
    return LabelGrid(labels, rng.random((h, w, 1)))


def random_tree(rng, grid, max_depth, p_split=0.6):
    """Complete tree with random legal actions."""
    tree = ParseTree.for_grid(grid, max_depth)
    while (nid := next_unexpanded(tree)) is not None:
        node = tree.nodes[nid]
        legal = legal_rules(node.region, node.depth, max_depth)
        splits = [a for a in "xy" if legal[0 if a == "x" else 1]]
        if splits and rng.random() < p_split:
            action = Action.split(splits[rng.integers(len(splits))], float(rng.uniform(0.01, 0.99)))
        else:
            action = Action.assign(1 if rng.random() < 0.5 else -1)
        apply_action(tree, nid, action)
    return tree


@st.composite
def grids(draw, max_side=12):
    w = draw(st.integers(1, max_side))
    h = draw(st.integers(1, max_side))
    seed = draw(st.integers(0, 2**32 - 1))
    p = draw(st.floats(0.0, 1.0))
    return random_grid(np.random.default_rng(seed), w, h, p)


@st.composite
def grids_and_trees(draw, max_side=12, max_depth=4):
    grid = draw(grids(max_side))
    depth = draw(st.integers(1, max_depth))
    seed = draw(st.integers(0, 2**32 - 1))
    return grid, random_tree(np.random.default_rng(seed), grid, depth)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one line each in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
