from pixseg.help_text import build_help_lines


def test_help_lines_cover_every_subcommand():
    lines = build_help_lines()
    commands = [line.split()[0] for line in lines]
    assert commands == ["synth", "train", "predict", "evaluate", "sample-stats", "compare-samplers"]
    text = "\n".join(lines)
    assert "uniform|class_balanced" in text
    assert "model.pxseg" in text
