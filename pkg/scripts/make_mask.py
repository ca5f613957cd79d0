"""Regenerate the bundled three-bar mask image."""

from pathlib import Path

from dspimage.optics import builtin_image, write_pgm8

if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "dspimage" / "presets" / "three_bar.pgm"
    write_pgm8(out, builtin_image("three_bar", 256))
    print(out)
