import csv

import numpy as np
import pytest
from PIL import Image

from shapeparse.approximator import Architecture, PolicyNet
from shapeparse.env import LearnerPolicy
from shapeparse.evalreport import (EvalResult, evaluate, format_table, majority_accuracy,
                                   pixel_accuracy, render, render_array, tree_accuracy,
                                   write_report_csv)
from shapeparse.grammar import Action, IncompleteTreeError, ParseTree, apply_action
from shapeparse.oracle import oracle_parse
from shapeparse.raster import LabelGrid, PredictionGrid


def test_pixel_accuracy():
    truth = LabelGrid(np.array([[1, -1], [-1, -1]]))
    assert pixel_accuracy(PredictionGrid(np.array([[1, 1], [-1, -1]])), truth) == 0.75
    with pytest.raises(ValueError):
        pixel_accuracy(PredictionGrid(np.ones((1, 2), int)), truth)
    assert majority_accuracy(truth) == 0.75


def test_evaluate_with_callable_and_learner():
    grids = [LabelGrid(np.array([[1, 1, -1, -1]] * 2)), LabelGrid(np.ones((2, 4), int))]
    res = evaluate(lambda g, d: oracle_parse(g, d), grids, 3, algorithm="Oracle")
    assert res.accuracies == [1.0, 1.0] and res.mean == 1.0 and len(res.trees) == 2
    arch = Architecture(side=8, conv=(4,), kernel=2, dense=(8,))
    res = evaluate(LearnerPolicy(PolicyNet(arch, 0), max_depth=2), [(grids[0], "x")], 2)
    assert 0.0 <= res.mean <= 1.0
    with pytest.raises(ValueError):
        EvalResult([1.5])
    assert np.isnan(EvalResult([]).mean)


def test_report_csv_and_table(tmp_path):
    rows = [{"algorithm": "DRAG", "fold": 1, "train_acc": 0.9, "test_acc": 0.8},
            {"algorithm": "BC", "fold": 0, "train_acc": 0.7, "test_acc": None},
            {"algorithm": "DRAG", "fold": 0, "train_acc": 0.8, "test_acc": 0.6}]
    write_report_csv(rows, tmp_path / "r.csv")
    out = list(csv.reader(open(tmp_path / "r.csv")))
    assert out[0] == ["algorithm", "fold", "train_acc", "test_acc"]
    assert [r[0] for r in out[1:]] == ["BC", "DRAG", "DRAG"]
    assert out[1][3] == "" and out[2][2] == "0.800000"
    table = format_table(rows)
    lines = table.splitlines()
    assert lines[1].startswith("BC") and "70.00%" in lines[1] and "---" in lines[1]
    assert "85.00%" in lines[2] and "70.00%" in lines[2]


def test_render(tmp_path):
    grid = LabelGrid(np.array([[1, 1, -1, -1]] * 4))
    tree = oracle_parse(grid, 3)
    img, n = render_array(tree, grid, scale=2)
    assert img.shape == (8, 8, 3) and n == 2
    # painted leaf is red-tinted, unpainted blue-tinted
    assert img[3, 1, 0] > img[3, 1, 2] and img[3, 5, 2] > img[3, 5, 0]
    assert render(tree, grid, tmp_path / "o.png", scale=2) == 2
    assert Image.open(tmp_path / "o.png").size == (8, 8)
    partial = ParseTree.for_grid(grid, 3)
    apply_action(partial, 0, Action.split("x", 0.5))
    with pytest.raises(IncompleteTreeError):
        render_array(partial, grid)
    assert tree_accuracy(tree, grid) == 1.0
