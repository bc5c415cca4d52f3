"""JSON keystores for single-owner keys and multi-user deployments."""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .keys import OrthoKey, PermKey, SingleUserKey, UserKey
from .multi import MultiUserContext

FORMAT_NAME = "weightmark-keystore"
FORMAT_VERSION = 1


@dataclass
class Keystore:
    mode: str
    s: int
    d: int
    keys: list = field(default_factory=list)
    context: MultiUserContext | None = None


def encode_matrix(M: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(M, dtype="<f8").tobytes()).decode("ascii")


def decode_matrix(text: str, rows: int, cols: int) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"), validate=True)
    if len(raw) != rows * cols * 8:
        raise FormatError(f"matrix payload has {len(raw)} bytes, expected {rows * cols * 8}")
    return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)


def _key_entry(key: SingleUserKey) -> dict:
    return {
        "L_W": list(key.L_W),
        "L_P1": [p.tolist() for p in key.L_P1],
        "L_P2": [p.tolist() for p in key.L_P2],
        "seed": int(key.seed),
    }


def _shared_fields(keys: list[SingleUserKey]) -> dict:
    first = keys[0]
    for k in keys[1:]:
        if (k.L_M, k.t, k.l, k.scale_wm, k.d) != (first.L_M, first.t, first.l,
                                                   first.scale_wm, first.d):
            raise FormatError("keys in one keystore must share L_M, t, l, scale_wm and d")
    return {"d": first.d, "t": first.t, "l": first.l, "scale_wm": first.scale_wm,
            "L_M": list(first.L_M)}


def save_keystore(keys, path, s: int) -> Path:
    """Persist a :class:`SingleUserKey`, a list of them, or a :class:`MultiUserContext`."""
    path = Path(path)
    doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "s": int(s)}
    if isinstance(keys, MultiUserContext):
        ctx = keys
        ids = ctx.user_ids
        if len(set(ids)) != len(ids):
            raise FormatError("duplicate user_id in keystore")
        if not ctx.users:
            raise FormatError("multi-user keystore without users")
        doc["mode"] = "multi"
        doc.update(_shared_fields([u.key for u in ctx.users]))
        doc["num_noise"] = ctx.num_noise
        doc["sigma_E"] = ctx.sigma_E
        doc["B"] = encode_matrix(ctx.B.B)
        doc["users"] = [dict(_key_entry(u.key), user_id=u.user_id, noise_seed=int(u.noise_seed),
                             num_noise=u.num_noise) for u in ctx.users]
    else:
        single = [keys] if isinstance(keys, SingleUserKey) else list(keys)
        if not single:
            raise FormatError("nothing to save")
        doc["mode"] = "single"
        doc.update(_shared_fields(single))
        doc["keys"] = [_key_entry(k) for k in single]
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _parse_key(entry: dict, shared: dict) -> SingleUserKey:
    return SingleUserKey(
        L_M=shared["L_M"],
        L_W=entry["L_W"],
        L_P1=[PermKey(m) for m in entry["L_P1"]],
        L_P2=[PermKey(m) for m in entry["L_P2"]],
        scale_wm=float(shared["scale_wm"]),
        seed=int(entry["seed"]),
    )


def load_keystore(path) -> Keystore:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a JSON keystore ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise FormatError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported keystore version {doc.get('version')!r}")
    try:
        s, d, t, l = (int(doc[k]) for k in ("s", "d", "t", "l"))
        mode = doc["mode"]
        if mode == "single":
            keys = [_parse_key(e, doc) for e in doc["keys"]]
            store = Keystore(mode, s, d, keys=keys)
        elif mode == "multi":
            users = []
            for e in doc["users"]:
                users.append(UserKey(user_id=str(e["user_id"]), key=_parse_key(e, doc),
                                     noise_seed=int(e["noise_seed"]),
                                     num_noise=int(e["num_noise"])))
            ids = [u.user_id for u in users]
            if len(set(ids)) != len(ids):
                raise FormatError(f"{path}: duplicate user_id")
            ctx = MultiUserContext(B=OrthoKey(decode_matrix(doc["B"], d, d)), L_M=doc["L_M"],
                                   num_noise=int(doc["num_noise"]),
                                   sigma_E=float(doc["sigma_E"]), users=users)
            store = Keystore(mode, s, d, keys=[u.key for u in users], context=ctx)
        else:
            raise FormatError(f"{path}: unknown mode {mode!r}")
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, binascii.Error) as exc:
        raise FormatError(f"{path}: malformed keystore ({exc})") from exc
    for k in store.keys:
        if (k.t, k.l, k.d) != (t, l, d):
            raise FormatError(f"{path}: key sizes disagree with the header")
        if any(not 0 <= i < s for i in k.L_M + k.L_W):
            raise FormatError(f"{path}: key row index outside [0, {s})")
    return store
