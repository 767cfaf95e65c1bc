"""Checkpoint files: a JSON manifest followed by a little-endian float32 payload.

Layout::

    HAFUSE-CKPT-1\\n
    <manifest length, 8-byte little-endian unsigned>
    <manifest, UTF-8 JSON>
    <payload>

The manifest lists every parameter's path, shape and byte offset in payload
order, the configs needed to rebuild the networks, and a SHA-256 of the payload.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from hafuse.discriminator import DetailedConfig, SalientConfig
from hafuse.errors import FormatError
from hafuse.fusion import DISC_VARIANTS, FusionNets, build_nets
from hafuse.generator import GeneratorConfig
from hafuse.params import ParamSet

FORMAT_VERSION = "HAFUSE-CKPT-1"
_MAGIC = (FORMAT_VERSION + "\n").encode("ascii")
_LE_F32 = np.dtype("<f4")


def save_checkpoint(path: str | os.PathLike, params: dict[str, ParamSet], configs: dict) -> None:
    """Write named parameter sets (e.g. ``{"G": ..., "D_S": ...}``) and configs."""
    entries, chunks, offset = [], [], 0
    for group in sorted(params):
        pset = params[group]
        for name in pset:
            arr = np.ascontiguousarray(pset[name].data, dtype=_LE_F32)
            entries.append({"name": f"{group}.{name}", "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
    payload = b"".join(chunks)
    manifest = {
        "format": FORMAT_VERSION,
        "configs": configs,
        "parameters": entries,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    text = json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")
    Path(path).write_bytes(_MAGIC + struct.pack("<Q", len(text)) + text + payload)


def load_checkpoint(path: str | os.PathLike, verify: bool = True) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(configs, {"group.name": float32 array})``.

    With ``verify`` the payload hash must match the manifest.
    """
    buf = Path(path).read_bytes()
    if not buf.startswith(_MAGIC):
        head = buf[: len(_MAGIC)].split(b"\n")[0]
        raise FormatError(f"{path}: unsupported checkpoint version {head!r}, expected {FORMAT_VERSION}", offset=0)
    pos = len(_MAGIC)
    if len(buf) < pos + 8:
        raise FormatError(f"{path}: truncated manifest length", offset=pos)
    (mlen,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    if len(buf) < pos + mlen:
        raise FormatError(f"{path}: truncated manifest", offset=len(buf))
    try:
        manifest = json.loads(buf[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed manifest: {exc}", offset=pos) from None
    pos += mlen
    if manifest.get("format") != FORMAT_VERSION:
        raise FormatError(f"{path}: manifest version {manifest.get('format')!r} != {FORMAT_VERSION}", offset=pos)
    payload = buf[pos:]
    if len(payload) != manifest["payload_bytes"]:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, manifest declares {manifest['payload_bytes']}",
                          offset=pos)
    if verify and hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise FormatError(f"{path}: payload checksum mismatch", offset=pos)

    arrays, expected = {}, 0
    for entry in manifest["parameters"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4
        if entry["offset"] != expected:
            raise FormatError(f"{path}: parameter {entry['name']} at offset {entry['offset']}, expected {expected}",
                              offset=pos + entry["offset"])
        arrays[entry["name"]] = np.frombuffer(payload, dtype=_LE_F32, count=nbytes // 4,
                                              offset=expected).reshape(shape).astype(np.float32)
        expected += nbytes
    if expected != len(payload):
        raise FormatError(f"{path}: declared tensors cover {expected} of {len(payload)} payload bytes", offset=pos)
    return manifest["configs"], arrays


# --------------------------------------------------------------------------
# whole-model helpers


def nets_configs(nets: FusionNets, patch_size: int) -> dict:
    some_sal = next((d for d in (nets.d_ir, nets.d_vi) if d is not None and d.kind == "salient"), None)
    some_det = next((d for d in (nets.d_ir, nets.d_vi) if d is not None and d.kind == "detailed"), None)
    return {
        "generator": dataclasses.asdict(nets.generator.cfg),
        "salient": dataclasses.asdict(some_sal.cfg if some_sal else SalientConfig()),
        "detailed": dataclasses.asdict(some_det.cfg if some_det else DetailedConfig()),
        "disc_variant": nets.disc_variant,
        "patch_size": patch_size,
    }


def save_nets(path: str | os.PathLike, nets: FusionNets, patch_size: int, extra: dict | None = None) -> None:
    configs = nets_configs(nets, patch_size)
    if extra:
        configs["extra"] = extra
    save_checkpoint(path, {k: v.params for k, v in nets.slots().items()}, configs)


def load_nets(path: str | os.PathLike, verify: bool = True) -> FusionNets:
    configs, arrays = load_checkpoint(path, verify)
    variant = configs["disc_variant"]
    if variant not in DISC_VARIANTS:
        raise FormatError(f"{path}: unknown discriminator combination {variant!r}")
    # attention toggles are re-applied by build_nets from the variant name
    sal = dict(configs["salient"], use_attention=True)
    det = dict(configs["detailed"], use_attention=True)
    nets = build_nets(GeneratorConfig(**configs["generator"]), SalientConfig(**sal), DetailedConfig(**det),
                      variant, configs["patch_size"], seed=0, dtype=np.float32)
    for slot, net in nets.slots().items():
        prefix = slot + "."
        state = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        try:
            net.params.load_state(state)
        except Exception as exc:
            raise FormatError(f"{path}: slot {slot}: {exc}") from None
    leftover = {k.split(".", 1)[0] for k in arrays} - set(nets.slots())
    if leftover:
        raise FormatError(f"{path}: parameters for unknown slots {sorted(leftover)}")
    return nets
