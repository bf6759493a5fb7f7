import io

from agricube.render import Palette, render_table, supports_color


class _Tty(io.StringIO):
    def isatty(self):
        return True


def test_supports_color(monkeypatch):
    monkeypatch.delenv("NO_COLOR", raising=False)
    assert supports_color(stream=_Tty())
    assert not supports_color(stream=io.StringIO())
    assert not supports_color(disable=True, stream=_Tty())
    monkeypatch.setenv("NO_COLOR", "1")
    assert not supports_color(stream=_Tty())


def test_palette():
    assert Palette(False).c("RED", "x") == "x"
    assert Palette(True).c("RED", "x") == "\x1b[31mx\x1b[0m"
    assert Palette(True).c("PURPLE", "x") == "x"


def test_render_table_alignment():
    lines = render_table(["id", "value"], [["1", "0.5"], ["12", "10.25"]])
    assert lines == [
        "id  value",
        "--  -----",
        " 1    0.5",
        "12  10.25",
    ]


def test_render_table_cell_colors():
    lines = render_table(["a"], [["ok"], ["bad"]], Palette(True),
                         lambda i, j, text: "RED" if text == "bad" else None)
    assert lines[2] == " ok"
    assert lines[3] == "\x1b[31mbad\x1b[0m"
