"""Convert a <root>/<class>/*.{jpg,png,...} tree into the binary PPM layout
that `fgsmkit --data-dir` reads. Needs Pillow (not a package dependency).

    python scripts/convert_images_to_ppm.py raw_images/ data_ppm/ --size 32
"""

import argparse
from pathlib import Path

from PIL import Image

EXTS = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".ppm"}


def convert(src: Path, dst: Path, size=None):
    n = 0
    for class_dir in sorted(d for d in src.iterdir() if d.is_dir()):
        out_dir = dst / class_dir.name
        out_dir.mkdir(parents=True, exist_ok=True)
        for f in sorted(class_dir.iterdir()):
            if f.suffix.lower() not in EXTS:
                continue
            img = Image.open(f).convert("RGB")
            if size:
                img = img.resize((size, size), Image.BILINEAR)
            img.save(out_dir / (f.stem + ".ppm"), format="PPM")
            n += 1
    return n


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("src", type=Path)
    p.add_argument("dst", type=Path)
    p.add_argument("--size", type=int, help="optional square resize (the loader also resizes)")
    a = p.parse_args()
    print(f"converted {convert(a.src, a.dst, a.size)} images into {a.dst}")
