import copy
import json

import numpy as np
import pytest

from mppbsde import ScenarioError, builtin_scenario, load_scenario, parse_scenario
from mppbsde.scenario import BUILTIN, compile_expression


def base():
    return copy.deepcopy(BUILTIN["canonical"])


class TestRoundTrip:
    @pytest.mark.parametrize("name", sorted(BUILTIN))
    def test_builtin_roundtrip(self, name):
        s = builtin_scenario(name)
        again = parse_scenario(json.loads(s.dumps()))
        assert again.to_dict() == s.to_dict()
        assert again.digest() == s.digest()

    def test_defaults_filled(self):
        d = base()
        del d["grid"]["N"]
        s = parse_scenario(d)
        assert s.grid_opts["N"] == 1000 and s.grid_opts["scheme"] == "explicit"
        assert s.run["quad_step"] == 0.01 and s.data["terminal"]["bound"] is None

    def test_input_not_mutated(self):
        d = base()
        before = copy.deepcopy(d)
        parse_scenario(d)
        assert d == before

    def test_load_file(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(base()))
        assert load_scenario(p).name == "canonical"

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{nope")
        with pytest.raises(ScenarioError, match="invalid JSON"):
            load_scenario(p)

    def test_digest_sensitive(self):
        d = base()
        d["grid"]["N"] = 999
        assert parse_scenario(d).digest() != parse_scenario(base()).digest()


class TestAccessors:
    def test_seeds(self):
        d = base()
        d["run"]["seeds"] = {"start": 5, "count": 3}
        assert parse_scenario(d).seeds() == [5, 6, 7]
        assert parse_scenario(d).seeds(offset=10) == [15, 16, 17]
        d["run"]["seeds"] = [1, 4]
        assert parse_scenario(d).seeds(1) == [2, 5]

    def test_dt_grid(self):
        d = base()
        del d["grid"]["N"]
        d["grid"]["dt"] = 0.01
        assert parse_scenario(d).grid().N == 100

    def test_mean_terminal(self):
        assert builtin_scenario("canonical").mean_terminal() == pytest.approx(1 - np.exp(-1), abs=1e-12)

    def test_loss_mean_xi(self):
        s = builtin_scenario("binding")
        assert float(s.loss(0.0, np.array([1 - np.exp(-1)]))[0]) == pytest.approx(0.0, abs=1e-12)

    def test_two_marks(self):
        s = builtin_scenario("two_marks")
        assert s.spec.K == 2
        assert s.xi(np.array([[5, 1], [0, 3]])).tolist() == [2.0, -3.0]


class TestErrors:
    def error(self, d):
        with pytest.raises(ScenarioError) as e:
            parse_scenario(d)
        return e.value

    def test_phi_sum(self):
        d = base()
        d["compensator"]["phi"]["values"] = [[0.9]]
        e = self.error(d)
        assert e.pointer == "/compensator/phi/values/0" and "sum = 0.9" in str(e)
        assert str(e).startswith("/compensator/phi/values/0: ")

    def test_phi_width(self):
        d = base()
        d["compensator"]["phi"]["values"] = [[0.5, 0.5]]
        assert self.error(d).pointer == "/compensator/phi/values/0"

    def test_A_decreasing(self):
        d = base()
        d["compensator"]["A"] = {"times": [0, 0.5, 1], "values": [0, 1, 0.5]}
        assert self.error(d).pointer == "/compensator/A/values/2"

    def test_unknown_key(self):
        d = base()
        d["grid"]["bogus"] = 1
        assert self.error(d).pointer == "/grid"

    def test_type_error(self):
        d = base()
        d["grid"]["N"] = "many"
        assert self.error(d).pointer == "/grid/N"

    def test_missing_section(self):
        d = base()
        del d["driver"]
        assert self.error(d).pointer == "/"

    def test_unknown_driver(self):
        d = base()
        d["driver"]["name"] = "mystery:1"
        assert self.error(d).pointer == "/driver/name"

    def test_bad_expression(self):
        d = base()
        d["terminal"]["expr"] = "__import__('os')"
        assert self.error(d).pointer == "/terminal/expr"

    def test_loss_mean_needs_nothing_else(self):
        d = base()
        d["loss"] = {"name": "quadratic:1"}
        assert self.error(d).pointer == "/loss/name"

    def test_kappa_bounds(self):
        d = base()
        d["loss"] = {"name": "sine:0,0.4", "kappa": [0.7, 1.4]}
        assert self.error(d).pointer == "/loss/kappa"
        d["loss"]["kappa"] = [0.5, 2.0]
        assert parse_scenario(d).loss.kappa == 4.0

    def test_growth_pairing(self):
        d = base()
        d["driver"]["growth"] = {"alpha_times": [0.0]}
        assert self.error(d).pointer == "/driver/growth"

    def test_not_object(self):
        with pytest.raises(ScenarioError):
            parse_scenario([1, 2])

    def test_unknown_builtin(self):
        with pytest.raises(ScenarioError, match="unknown built-in"):
            builtin_scenario("nope")


class TestTable:
    def table(self, **extra):
        d = base()
        d["terminal"] = {"table": {"counts": [[0], [1]], "values": [0.0, 2.0], **extra}}
        return d

    def test_default(self):
        s = parse_scenario(self.table(default=5.0))
        assert s.xi(np.array([[0], [1], [7]])).tolist() == [0.0, 2.0, 5.0]

    def test_missing_entry(self):
        s = parse_scenario(self.table())
        with pytest.raises(ValueError, match="no entry"):
            s.xi(np.array([[3]]))

    def test_length_mismatch(self):
        d = self.table()
        d["terminal"]["table"]["values"] = [1.0]
        with pytest.raises(ScenarioError) as e:
            parse_scenario(d)
        assert e.value.pointer == "/terminal/table/values"

    def test_row_width(self):
        d = self.table()
        d["terminal"]["table"]["counts"] = [[0, 1], [1]]
        with pytest.raises(ScenarioError) as e:
            parse_scenario(d)
        assert e.value.pointer == "/terminal/table/counts/0"


class TestExpressions:
    C = np.array([[0, 0], [1, 2], [3, 0]])

    @pytest.mark.parametrize(
        "text,want",
        [
            ("n", [0, 3, 3]),
            ("n1 - n2", [0, -1, 3]),
            ("n >= 1", [0, 1, 1]),
            ("(n1 >= 1) and (n2 >= 1)", [0, 1, 0]),
            ("not n1", [1, 0, 0]),
            ("n1 == 1 or n1 == 3", [0, 1, 1]),
            ("0 < n < 3", [0, 0, 0]),
            ("min(n, 2) + max(n1, 1)", [1, 3, 5]),
            ("where(n2 > 0, 10, -1)", [-1, 10, -1]),
            ("2 ** n1 % 3", [1, 2, 2]),
            ("abs(-n) // 2", [0, 1, 1]),
            ("4.5", [4.5, 4.5, 4.5]),
        ],
    )
    def test_values(self, text, want):
        np.testing.assert_allclose(compile_expression(text, 2)(self.C), want)

    def test_functions(self):
        g = compile_expression("exp(n1) + log(1 + n2) + sqrt(n) + floor(n / 2)", 2)
        assert g(np.array([[1, 1]]))[0] == pytest.approx(np.e + np.log(2) + np.sqrt(2) + 1)

    @pytest.mark.parametrize(
        "text",
        [
            "__import__('os')",
            "n.real",
            "n[0]",
            "open('x')",
            "lambda: 1",
            "[n]",
            "'s'",
            "n3",
            "x",
            "2 ** 100",
            "min(n, key=1)",
            "True",
            "(",
        ],
    )
    def test_rejected(self, text):
        with pytest.raises(ValueError):
            compile_expression(text, 2)

    def test_node_limit(self):
        with pytest.raises(ValueError, match="too long"):
            compile_expression(" + ".join(["n"] * 150), 1)
