import numpy as np
import pytest
import yaml

from feedsim.scenario import Scenario, Utensil, valid_cell_mask


class TestScenarioLoad:
    def test_default_loads(self, scenario):
        assert scenario.bar_length == pytest.approx(0.135)
        assert scenario.bowl.guard_height == pytest.approx(0.03)
        assert scenario.utensil.kind == "spoon"

    def test_hash_stable_and_sensitive(self, scenario):
        assert scenario.canonical_hash() == Scenario.default().canonical_hash()
        other = scenario.replace(**{"seed": 999})
        assert other.canonical_hash() != scenario.canonical_hash()

    def test_bad_bar_length_rejected(self, scenario):
        raw = dict(scenario.raw)
        with pytest.raises(ValueError):
            scenario.replace(**{"wiping_bar.end": [0.085, -0.05, 0.035]})
        del raw

    def test_unknown_utensil_rejected(self, scenario):
        with pytest.raises(ValueError):
            scenario.replace(**{"utensil": "chopsticks"})

    def test_all_five_utensils_resolve(self):
        for name in ("silicone_spoon", "small_plastic_spoon",
                     "large_plastic_spoon", "plastic_fork", "metal_fork"):
            u = Utensil.from_name(name)
            assert u.kind in ("spoon", "fork")
            assert u.capacity_g > 0

    def test_version_required(self, scenario):
        raw = dict(scenario.raw)
        raw["version"] = 2
        with pytest.raises(ValueError):
            Scenario.from_dict(raw)

    def test_yaml_round_trip(self, scenario, tmp_path):
        p = tmp_path / "sc.yaml"
        p.write_text(yaml.safe_dump(scenario.raw))
        again = Scenario.from_yaml(p)
        assert again.canonical_hash() == scenario.canonical_hash()


class TestFoodGrid:
    def test_explicit_mass_map(self, scenario):
        n = scenario.bowl.grid_n
        grid = np.zeros((n, n))
        grid[4, 4] = 5.0
        grid[4, 5] = 3.0
        sc = scenario.replace(**{"food.preset": "explicit",
                                 "food.grid": grid.tolist()})
        assert sc.food_grid[4, 4] == 5.0
        assert sc.food_grid.sum() == pytest.approx(8.0)

    def test_explicit_wrong_shape_rejected(self, scenario):
        with pytest.raises(ValueError):
            scenario.replace(**{"food.preset": "explicit",
                                "food.grid": [[1.0, 2.0]]})

    def test_mound_total_and_guard_cap(self, scenario):
        h_per_g = scenario.sim["height_per_gram"]
        cap = scenario.bowl.guard_height / h_per_g
        assert scenario.food_grid.sum() == pytest.approx(150.0)
        assert scenario.food_grid.max() <= cap + 1e-9

    def test_mass_only_in_valid_cells(self, scenario):
        mask = valid_cell_mask(scenario.bowl)
        assert scenario.food_grid[~mask].sum() == 0.0
