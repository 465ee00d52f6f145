import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from labeltrick import EnumerationTooLarge, LabelMatrix, SplitMask, enumerate_splits, masked_labels, \
    one_vs_all_splits, sample_split
from labeltrick.splits import full_input_split, read_split_file, split_table, write_split_file


@pytest.fixture
def labels():
    return LabelMatrix.from_classes([0, 1, 2, 1, 0, 2], [0, 2, 3, 5], 3)


def test_label_matrix_checks():
    with pytest.raises(ValueError):
        LabelMatrix(np.array([[1.0, 1.0], [0, 1]]), [0])
    with pytest.raises(ValueError):
        LabelMatrix(np.eye(3), [0, 0])
    with pytest.raises(ValueError):
        LabelMatrix(np.eye(3), [4])
    y = LabelMatrix(np.array([0.5, -1.0, 2.0]), [0, 2], kind="real")
    assert y.c == 1
    assert_array_equal(y.y_tr[:, 0], [0.5, 0, 2.0])


def test_sample_split_partitions(labels):
    mask = sample_split(labels, 0.5, seed=3)
    mask.check(labels)
    assert_array_equal(mask.in_mask | mask.out_mask, labels.train_mask)
    again = sample_split(labels, 0.5, seed=3)
    assert_array_equal(mask.in_mask, again.in_mask)


@pytest.mark.parametrize("alpha", [0.0, 1.0, 1.2])
def test_sample_split_rejects_alpha(labels, alpha):
    with pytest.raises(ValueError):
        sample_split(labels, alpha, seed=0)


def test_split_frequency():
    labels = LabelMatrix.from_classes(np.zeros(400, int), np.arange(400), 1)
    rng = np.random.default_rng(0)
    share = np.mean([sample_split(labels, 0.3, rng).in_mask.mean() for _ in range(50)])
    assert abs(share - 0.3) < 0.01


def test_enumeration_weights(labels):
    splits = enumerate_splits(labels, 0.3)
    assert len(splits) == 16
    assert_allclose(sum(s.weight for s in splits), 1.0)
    bits, w = split_table(1, 0.3)
    assert_array_equal(bits, [[False], [True]])
    assert_allclose(w, [0.7, 0.3])


def test_enumeration_guard():
    with pytest.raises(EnumerationTooLarge):
        split_table(21, 0.5)


def test_one_vs_all(labels):
    splits = one_vs_all_splits(labels)
    assert len(splits) == labels.m
    for s, node in zip(splits, labels.train_idx):
        assert s.out_mask.sum() == 1 and s.out_mask[node]
        assert s.weight == pytest.approx(0.25)


def test_masked_labels_rescale(labels):
    mask = sample_split(labels, 0.4, seed=1)
    y_in = masked_labels(labels, mask, rescale=True)
    assert_allclose(y_in[mask.in_mask], labels.Y[mask.in_mask] / 0.4)
    assert np.all(y_in[~mask.in_mask] == 0)
    with pytest.raises(ValueError):
        masked_labels(labels, full_input_split(labels), rescale=True)


def test_split_mask_rejects_overlap():
    with pytest.raises(ValueError):
        SplitMask(np.array([True, False]), np.array([True, True]))


def test_split_file_roundtrip(tmp_path, labels):
    mask = sample_split(labels, 0.5, seed=7)
    path = tmp_path / "split.tsv"
    write_split_file(path, labels, mask)
    back = read_split_file(path, labels, 0.5)
    assert_array_equal(back.in_mask, mask.in_mask)
    assert_array_equal(back.out_mask, mask.out_mask)
    path.write_text("0\tin\n2\tmaybe\n")
    with pytest.raises(ValueError, match=":2:"):
        read_split_file(path, labels)
    path.write_text("0\tin\n")
    with pytest.raises(ValueError, match="partition"):
        read_split_file(path, labels)
