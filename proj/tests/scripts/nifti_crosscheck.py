#!/usr/bin/env python3
"""Cross-check NIfTI-1 reading and writing against nibabel."""
import argparse
import pathlib
import shutil
import subprocess
import sys
import tempfile

import nibabel as nib
import numpy as np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--helper", required=True)
    args = ap.parse_args()
    tmp = pathlib.Path(tempfile.mkdtemp(prefix="ttoreg_nifti_"))
    try:
        for ext in ("nii", "nii.gz"):
            ours = tmp / f"ours.{ext}"
            subprocess.run([args.helper, "write", ours], check=True)
            img = nib.load(ours)
            data = np.asarray(img.dataobj, dtype=np.float64)
            if data.shape != (256, 256, 128):
                sys.exit(f"{ours}: shape {data.shape}")
            if not np.allclose(img.header.get_zooms()[:3], (0.4297, 0.4297, 1.5), atol=1e-6):
                sys.exit(f"{ours}: zooms {img.header.get_zooms()}")
            x, y, z = np.meshgrid(np.arange(256), np.arange(256), np.arange(128), indexing="ij")
            expect = ((x + 3 * y + 7 * z) % 251) / 250.0
            if np.max(np.abs(data - expect)) > 1e-6:
                sys.exit(f"{ours}: voxel values differ")

            theirs = tmp / f"theirs.{ext}"
            vol = ((2 * x + y + 5 * z) % 199).astype(np.float32) / 198.0
            out = nib.Nifti1Image(vol, np.diag([0.8, 0.9, 2.0, 1.0]))
            out.header.set_zooms((0.8, 0.9, 2.0))
            nib.save(out, theirs)
            subprocess.run([args.helper, "read", theirs], check=True)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    print("nifti cross-check passed")


if __name__ == "__main__":
    main()
