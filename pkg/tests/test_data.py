import csv
import json

import numpy as np
import pytest

from eit.data import Dataset, generate_synthetic, load_dataset, save_dataset
from eit.errors import ContractError, LoadError
from eit.probes import ProbeRecord, frequency_share


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(4, 16, seed=7)
        b = generate_synthetic(4, 16, seed=7)
        assert (a.images == b.images).all() and (a.labels == b.labels).all()

    def test_range_and_shapes(self):
        ds = generate_synthetic(6, 12, seed=0)
        assert ds.images.shape == (6, 3, 12, 12)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        assert set(np.unique(ds.labels)) <= {0, 1}

    def test_classes_separable_by_spectrum(self):
        # class 0 concentrates mass below omega = pi/2, class 1 above
        ds = generate_synthetic(40, 16, seed=3)

        def low_mass(img):
            g = 16
            tokens = np.concatenate([[np.zeros(1)], img[0].reshape(-1, 1)])
            rec = ProbeRecord(0, np.full((1, 1 + g * g, 1 + g * g),
                                         1.0 / (1 + g * g)),
                              tokens, (g, g), 1.0)
            return frequency_share(rec, bins=10)[:5].sum()
        low0 = [low_mass(ds.images[i]) for i in range(len(ds)) if ds.labels[i] == 0]
        low1 = [low_mass(ds.images[i]) for i in range(len(ds)) if ds.labels[i] == 1]
        assert min(low0) > max(low1)

    def test_bad_args(self):
        with pytest.raises(ContractError):
            generate_synthetic(0, 16)


class TestRawFormat:
    def test_roundtrip(self, tmp_path):
        ds = generate_synthetic(5, 8, seed=1)
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert (back.labels == ds.labels).all()
        # u8 quantization: within half a step
        assert np.abs(back.images - ds.images).max() <= 0.5 / 255 + 1e-12

    def test_missing_sidecar(self, tmp_path):
        with pytest.raises(LoadError):
            load_dataset(tmp_path)

    def test_listed_file_missing(self, tmp_path):
        d = tmp_path / "d"
        save_dataset(generate_synthetic(2, 8, seed=0), d)
        (d / "img_00001.raw").unlink()
        with pytest.raises(LoadError, match="img_00001"):
            load_dataset(d)

    def test_wrong_payload_size(self, tmp_path):
        d = tmp_path / "d"
        save_dataset(generate_synthetic(1, 8, seed=0), d)
        (d / "img_00000.raw").write_bytes(b"\x00" * 10)
        with pytest.raises(LoadError, match="expected"):
            load_dataset(d)

    def test_row_count_mismatch(self, tmp_path):
        d = tmp_path / "d"
        save_dataset(generate_synthetic(2, 8, seed=0), d)
        with open(d / "labels.csv", "a", newline="") as f:
            csv.writer(f).writerow(["img_99999.raw", 0])
        with pytest.raises(LoadError):
            load_dataset(d)

    def test_corrupt_sidecar(self, tmp_path):
        d = tmp_path / "d"
        save_dataset(generate_synthetic(1, 8, seed=0), d)
        (d / "dataset.json").write_text(json.dumps({"height": 8}))
        with pytest.raises(LoadError, match="sidecar"):
            load_dataset(d)


class TestDatasetType:
    def test_label_validation(self):
        with pytest.raises(ContractError):
            Dataset(np.zeros((2, 3, 4, 4)), np.zeros(3, dtype=int))

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            Dataset(np.zeros((0, 3, 4, 4)), np.zeros(0, dtype=int))
