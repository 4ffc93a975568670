import pytest

from hmfstrata import config as cfgmod
from hmfstrata.errors import ConfigError

TEXT = """
seed = 9
[grid]
field = "line-singular"
nodes = 24
center = [0.1, 0.0, 0.0]
[densities]
radii = [0.1, 0.2]
points = [[0.0, 0.0, 0.1]]
[output]
dir = "elsewhere"
"""


def test_defaults():
    cfg = cfgmod.normalize({})
    assert cfg["seed"] == 0 and cfg["grid"]["field"] == "hedgehog"
    assert cfg["densities"]["quadrature"] == "auto"


def test_parse_emit_parse_roundtrip():
    cfg = cfgmod.parse_text(TEXT)
    assert cfg["grid"]["nodes"] == 24 and cfg["densities"]["points"] == [[0.0, 0.0, 0.1]]
    again = cfgmod.parse_text(cfgmod.dumps(cfg))
    assert again == cfg


def test_int_accepted_for_float():
    cfg = cfgmod.parse_text("[grid]\nlo = -1\nhi = 1\n")
    assert cfg["grid"]["lo"] == -1.0 and isinstance(cfg["grid"]["lo"], float)


@pytest.mark.parametrize("text,msg", [
    ("bogus = 1", "unknown key 'bogus'"),
    ("[grid]\nnodez = 3", "unknown key grid.nodez"),
    ("[grid]\nnodes = 2.5", "grid.nodes"),
    ("[grid]\nfield = \"torus\"", "grid.field"),
    ("[grid]\nnodes = 2", "at least 3"),
    ("[densities]\nradii = [-0.1]", "positive"),
    ("seed = -1", "seed"),
    ("[flow]\nstop_at_unwinding = 1", "flow.stop_at_unwinding"),
    ("[densities]\npoints = [[0.0, 0.0]]", "n coordinates"),
])
def test_rejections(text, msg):
    with pytest.raises(ConfigError, match=msg):
        cfgmod.parse_text(text)


def test_parse_error_has_position():
    with pytest.raises(ConfigError, match=r"line 3"):
        cfgmod.parse_text("[grid]\nnodes = 4\nfield = \n")


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        cfgmod.load(tmp_path / "nope.toml")


def test_hash_properties():
    a = cfgmod.parse_text(TEXT)
    b = cfgmod.parse_text(TEXT.replace("nodes = 24", "nodes    =   24\n\n# comment"))
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b)
    assert len(cfgmod.config_hash(a)) == 16
    c = cfgmod.parse_text(TEXT.replace('"elsewhere"', '"other"'))
    assert cfgmod.config_hash(c) == cfgmod.config_hash(a)
    d = cfgmod.parse_text(TEXT.replace("seed = 9", "seed = 10"))
    assert cfgmod.config_hash(d) != cfgmod.config_hash(a)
    e = cfgmod.parse_text(TEXT.replace("radii = [0.1, 0.2]", "radii = [0.1, 0.25]"))
    assert cfgmod.config_hash(e) != cfgmod.config_hash(a)
