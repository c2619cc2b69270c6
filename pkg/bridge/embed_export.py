#!/usr/bin/env python3
"""Bridge script: encode an image folder and a class-name list with a
pretrained vision-language checkpoint, writing the active-learning engine's
binary embedding + JSON-lines metadata formats.

The engine is consumed purely through its file formats (magic "OPEB",
version 1, float32 payload; metadata rows with id/label/image), so this
script stays standalone. The encoder is injectable: the default loader
targets a locally available biomedical CLIP-style checkpoint via open_clip
or transformers, and tests plug in a deterministic stub.

Manifest file (key = value lines):
    model            = hf-hub:some/checkpoint        (encoder identifier)
    image_dir        = /path/to/patches              (class-name subfolders)
    class_file       = /path/to/classes.txt          (one name per line)
    out_dir          = /path/to/output
    normalize        = true
    template         = An H&E image of {}
"""

import argparse
import json
import logging
import struct
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

logger = logging.getLogger("embed_export")

MAGIC = b"OPEB"
FORMAT_VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIQIB")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp", ".webp")
DEFAULT_TEMPLATE = "An H&E image of {}"


class Encoder(Protocol):
    """Anything that maps one image file or one text to a vector."""

    def encode_image(self, path: Path) -> np.ndarray: ...

    def encode_text(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class ExportManifest:
    model: str
    image_dir: Path
    class_file: Path
    out_dir: Path
    normalize: bool = True
    template: str = DEFAULT_TEMPLATE


def load_manifest(path) -> ExportManifest:
    pairs = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            pairs[key] = value
    missing = [k for k in ("model", "image_dir", "class_file", "out_dir") if k not in pairs]
    if missing:
        raise ValueError(f"{path}: missing keys: {', '.join(missing)}")
    return ExportManifest(
        model=pairs["model"],
        image_dir=Path(pairs["image_dir"]),
        class_file=Path(pairs["class_file"]),
        out_dir=Path(pairs["out_dir"]),
        normalize=pairs.get("normalize", "true").lower() in ("true", "1", "yes"),
        template=pairs.get("template", DEFAULT_TEMPLATE),
    )


def read_class_names(path: Path) -> list[str]:
    names = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n and not n.startswith("#")]
    if not names:
        raise ValueError(f"{path}: no class names")
    if len(set(names)) != len(names):
        raise ValueError(f"{path}: duplicate class names")
    return names


def write_embeddings(path: Path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    n, d = matrix.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, d, DTYPE_F32))
        f.write(matrix.tobytes(order="C"))


def write_metadata(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def _l2_normalize(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero embedding row")
    return matrix / norms


def list_images(image_dir: Path) -> list[Path]:
    """Every image under the folder, sorted by path for a fixed row order."""
    return sorted(
        p for p in image_dir.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def label_for(path: Path, image_dir: Path, class_names: list[str]) -> int:
    """Class index from the containing folder name, -1 when unknown."""
    relative = path.relative_to(image_dir)
    if len(relative.parts) >= 2 and relative.parts[0] in class_names:
        return class_names.index(relative.parts[0])
    return -1


def export_images(manifest: ExportManifest, encoder: Encoder) -> tuple[Path, Path]:
    class_names = read_class_names(manifest.class_file)
    paths = list_images(manifest.image_dir)
    vectors, rows = [], []
    for path in paths:
        try:
            vector = np.asarray(encoder.encode_image(path), dtype=np.float64)
        except Exception as err:
            logger.warning("skipping unreadable image %s: %s", path, err)
            continue
        relative = path.relative_to(manifest.image_dir)
        rows.append(
            {
                "id": str(relative),
                "label": label_for(path, manifest.image_dir, class_names),
                "image": str(relative),
            }
        )
        vectors.append(vector)
    if not vectors:
        raise RuntimeError(f"no image could be encoded under {manifest.image_dir}")
    matrix = np.vstack(vectors)
    if manifest.normalize:
        matrix = _l2_normalize(matrix)
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    emb_path = manifest.out_dir / "train_embeddings.bin"
    meta_path = manifest.out_dir / "train_metadata.jsonl"
    write_embeddings(emb_path, matrix)
    write_metadata(meta_path, rows)
    logger.info("exported %d images (%d skipped)", len(rows), len(paths) - len(rows))
    return emb_path, meta_path


def export_prompts(manifest: ExportManifest, encoder: Encoder) -> tuple[Path, Path]:
    if "{}" not in manifest.template:
        raise ValueError(f"template {manifest.template!r} has no {{}} placeholder")
    class_names = read_class_names(manifest.class_file)
    vectors = []
    rows = []
    for index, name in enumerate(class_names):
        prompt = manifest.template.format(name)
        vectors.append(np.asarray(encoder.encode_text(prompt), dtype=np.float64))
        rows.append({"id": name, "label": index})
    matrix = np.vstack(vectors)
    if manifest.normalize:
        matrix = _l2_normalize(matrix)
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    emb_path = manifest.out_dir / "prompt_embeddings.bin"
    meta_path = manifest.out_dir / "prompt_metadata.jsonl"
    write_embeddings(emb_path, matrix)
    write_metadata(meta_path, rows)
    return emb_path, meta_path


def load_pretrained_encoder(model_id: str) -> Encoder:
    """Load a CLIP-style checkpoint through open_clip or transformers.

    Requires the checkpoint to be available locally; synthetic data stands
    in for this bridge wherever no checkpoint exists.
    """
    try:
        return _OpenClipEncoder(model_id)
    except ImportError:
        pass
    try:
        return _TransformersEncoder(model_id)
    except ImportError:
        raise RuntimeError(
            "neither open_clip nor transformers is installed; "
            "install one of them or inject a custom encoder"
        )


class _OpenClipEncoder:
    def __init__(self, model_id: str):
        import open_clip  # deferred heavy import
        import torch
        from PIL import Image

        self._torch = torch
        self._image_cls = Image
        model, _, preprocess = open_clip.create_model_and_transforms(model_id)
        self._tokenizer = open_clip.get_tokenizer(model_id)
        self._model = model.eval()
        self._preprocess = preprocess

    def encode_image(self, path: Path) -> np.ndarray:
        image = self._image_cls.open(path).convert("RGB")
        batch = self._preprocess(image)[None]
        with self._torch.no_grad():
            return self._model.encode_image(batch)[0].cpu().numpy()

    def encode_text(self, text: str) -> np.ndarray:
        tokens = self._tokenizer([text])
        with self._torch.no_grad():
            return self._model.encode_text(tokens)[0].cpu().numpy()


class _TransformersEncoder:
    def __init__(self, model_id: str):
        import torch
        from PIL import Image
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self._image_cls = Image
        self._model = CLIPModel.from_pretrained(model_id).eval()
        self._processor = CLIPProcessor.from_pretrained(model_id)

    def encode_image(self, path: Path) -> np.ndarray:
        image = self._image_cls.open(path).convert("RGB")
        inputs = self._processor(images=image, return_tensors="pt")
        with self._torch.no_grad():
            return self._model.get_image_features(**inputs)[0].cpu().numpy()

    def encode_text(self, text: str) -> np.ndarray:
        inputs = self._processor(text=[text], return_tensors="pt", padding=True)
        with self._torch.no_grad():
            return self._model.get_text_features(**inputs)[0].cpu().numpy()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--manifest", required=True, help="export manifest file")
    parser.add_argument("--images", action="store_true", help="export image embeddings")
    parser.add_argument("--prompts", action="store_true", help="export prompt embeddings")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    manifest = load_manifest(args.manifest)
    if not (args.images or args.prompts):
        parser.error("nothing to do: pass --images and/or --prompts")
    encoder = load_pretrained_encoder(manifest.model)
    if args.images:
        emb, meta = export_images(manifest, encoder)
        print(f"wrote {emb} and {meta}")
    if args.prompts:
        emb, meta = export_prompts(manifest, encoder)
        print(f"wrote {emb} and {meta}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
