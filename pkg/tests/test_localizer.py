"""Per-entry counting, the localization decision, and result file IO."""
import numpy as np
import pytest

from conftest import pyramid_of
from parkloc.errors import InvalidInputError
from parkloc.features import FeaturePyramid
from parkloc.gallery import GalleryEntry, GalleryIndex
from parkloc.localizer import (
    LocalizationResult,
    decide_from_counts,
    entry_match_lists,
    format_match_line,
    localize_pyramid,
    read_counts_csv,
    read_results,
    write_counts_csv,
    write_results,
)
from parkloc.matcher import FineMatch, MatchParams
from parkloc.vehicle_filter import BoundingBox, DetectionSet


def tiny_pyramid(source_id="stub"):
    return FeaturePyramid(
        np.zeros((2, 2, 32), dtype=np.float32),
        np.zeros((8, 8, 32), dtype=np.float32),
        source_id,
    )


def fake_index(sections):
    entries = [
        GalleryEntry(
            source_id=f"e{k}",
            section_id=sec,
            pyramid=tiny_pyramid(f"e{k}"),
            detections=DetectionSet(f"e{k}"),
            original_size=(80, 80),
            processed_size=(80, 80),
            image_path=f"e{k}.png",
        )
        for k, sec in enumerate(sections)
    ]
    return GalleryIndex(entries=entries, build_params={}, manifest_text="")


@pytest.fixture(scope="module")
def golden_noise_index(golden_pyr):
    rng = np.random.default_rng([4, 999])
    noise_pyr = pyramid_of(rng.uniform(0, 1, size=(80, 80)), "noisy")
    entries = [
        GalleryEntry("gold", "sec1", golden_pyr, DetectionSet("gold"),
                     (80, 80), (80, 80), "gold.png"),
        GalleryEntry("noisy", "sec2", noise_pyr, DetectionSet("noisy"),
                     (80, 80), (80, 80), "noisy.png"),
    ]
    return GalleryIndex(entries=entries, build_params={}, manifest_text="")


class TestDecideFromCounts:
    def test_basic_arithmetic(self):
        index = fake_index(["s0", "s1", "s2"])
        r = decide_from_counts([3, 7, 2], index, "q", [3, 7, 2])
        assert r.predicted_section == "s1"
        assert r.best_entry == "e1"
        assert r.best_count == 7 and r.second_count == 3
        assert r.second_best_ratio == pytest.approx(3 / 7)
        assert r.low_confidence is False
        assert r.counts == [3, 7, 2] and r.raw_counts == [3, 7, 2]
        assert r.entry_ids == ("e0", "e1", "e2")

    def test_tie_picks_earliest_entry(self):
        index = fake_index(["s0", "s1"])
        r = decide_from_counts([5, 5], index, "q", [5, 5])
        assert r.best_entry == "e0"
        assert r.second_count == 5
        assert r.second_best_ratio == 1.0

    def test_all_zero_counts_flag_low_confidence(self):
        index = fake_index(["s0", "s1"])
        r = decide_from_counts([0, 0], index, "q", [0, 0])
        assert r.low_confidence is True
        assert r.second_best_ratio == 0.0
        assert r.best_count == 0

    def test_single_entry_has_zero_second(self):
        index = fake_index(["s0"])
        r = decide_from_counts([9], index, "q", [9])
        assert r.second_count == 0
        assert r.second_best_ratio == 0.0

    def test_raw_counts_stored_separately(self):
        index = fake_index(["s0", "s1"])
        r = decide_from_counts([1, 0], index, "q", [4, 9])
        assert r.predicted_section == "s0"
        assert r.raw_counts == [4, 9]


class TestLocalizePyramid:
    def test_identical_gallery_image_wins(self, golden_pyr, golden_noise_index):
        r = localize_pyramid("q", golden_pyr, None, golden_noise_index, MatchParams())
        assert r.predicted_section == "sec1"
        assert r.best_entry == "gold"
        assert r.best_count == 64
        assert r.counts == [64, 0]
        assert r.raw_counts == [64, 0]
        assert r.second_best_ratio == 0.0
        assert r.low_confidence is False

    def test_blanket_query_boxes_remove_everything(self, golden_pyr, golden_noise_index):
        blanket = DetectionSet("q", [BoundingBox(0.0, 0.0, 80.0, 80.0, "car", 0.95)])
        r = localize_pyramid("q", golden_pyr, blanket, golden_noise_index, MatchParams())
        assert r.counts == [0, 0]
        assert r.raw_counts == [64, 0]
        assert r.low_confidence is True

    def test_filter_can_be_disabled(self, golden_pyr, golden_noise_index):
        blanket = DetectionSet("q", [BoundingBox(0.0, 0.0, 80.0, 80.0, "car", 0.95)])
        r = localize_pyramid("q", golden_pyr, blanket, golden_noise_index,
                             MatchParams(), use_vehicle_filter=False)
        assert r.counts == [64, 0]
        assert r.predicted_section == "sec1"

    def test_both_mode_needs_boxes_on_both_sides(self, golden_pyr, golden_noise_index):
        blanket = DetectionSet("q", [BoundingBox(0.0, 0.0, 80.0, 80.0, "car", 0.95)])
        r = localize_pyramid("q", golden_pyr, blanket, golden_noise_index,
                             MatchParams(), removal_mode="both")
        # gallery side has no boxes, so nothing satisfies "both"
        assert r.counts == [64, 0]

    def test_jobs_count_does_not_change_matches(self, golden_pyr, golden_noise_index):
        seq = entry_match_lists(golden_pyr, golden_noise_index, MatchParams(), jobs=1)
        par = entry_match_lists(golden_pyr, golden_noise_index, MatchParams(), jobs=4)
        assert seq == par

    def test_empty_index_rejected(self, golden_pyr):
        empty = GalleryIndex(entries=[], build_params={}, manifest_text="")
        with pytest.raises(InvalidInputError):
            localize_pyramid("q", golden_pyr, None, empty, MatchParams())


class TestResultFiles:
    def _results(self):
        index = fake_index(["s0", "s1", "s2"])
        return [
            decide_from_counts([3, 7, 2], index, "q1", [3, 9, 2]),
            decide_from_counts([0, 0, 0], index, "q2", [0, 0, 0]),
        ]

    def test_results_round_trip(self, tmp_path):
        path = tmp_path / "results.txt"
        write_results(self._results(), path, {"threshold": 0.2})
        text = path.read_text()
        assert text.startswith("# parkloc results v1\n# config: ")
        assert '"threshold": 0.2' in text

        back = read_results(path)
        assert [r.query_id for r in back] == ["q1", "q2"]
        assert back[0].predicted_section == "s1"
        assert back[0].best_entry == "e1"
        assert back[0].best_count == 7 and back[0].second_count == 3
        assert back[0].second_best_ratio == pytest.approx(3 / 7, abs=5e-7)
        assert back[1].best_count == 0

    def test_ratio_written_with_six_decimals(self, tmp_path):
        path = tmp_path / "results.txt"
        write_results(self._results(), path)
        line = [l for l in path.read_text().splitlines() if l.startswith("q1")][0]
        assert line == "q1 s1 e1 7 3 0.428571"

    def test_counts_csv_round_trip(self, tmp_path):
        res = self._results()
        p1 = tmp_path / "counts.csv"
        p2 = tmp_path / "counts_raw.csv"
        write_counts_csv(res, p1, {"jobsless": True})
        write_counts_csv(res, p2, None, raw=True)

        header, rows = read_counts_csv(p1)
        assert header == ("e0", "e1", "e2")
        assert rows == [("q1", [3, 7, 2]), ("q2", [0, 0, 0])]
        _, raw_rows = read_counts_csv(p2)
        assert raw_rows[0] == ("q1", [3, 9, 2])


class TestFormatMatchLine:
    def test_three_decimal_fixed_point(self):
        m = FineMatch((1.0, 2.5), (3.25, 4.0), 0.87654, False)
        assert format_match_line(m) == "1.000 2.500 3.250 4.000 0.877"

    def test_negative_and_tiny_values(self):
        m = FineMatch((-0.5, 0.0004), (10.0, 9.9996), 0.2, True)
        assert format_match_line(m) == "-0.500 0.000 10.000 10.000 0.200"
