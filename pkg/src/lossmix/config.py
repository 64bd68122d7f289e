"""Config files (TOML), config hashing and hash verification of emitted artifacts."""
import hashlib
import json
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    pass


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj):
    """sha1 over the canonical JSON form of a config mapping."""
    return hashlib.sha1(canonical_json(obj).encode("utf-8")).hexdigest()


def load_config_file(path):
    """Parse a TOML config with ``[data]``, ``[train]``, ``[mixing]``, ``[model]`` sections.

    Parse errors are re-raised as ConfigError carrying the line and column.
    """
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(doc) - {"data", "train", "mixing", "model"}
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
    return doc


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _self_consistent(rec):
    if "config" not in rec and isinstance(rec.get("meta"), dict):
        rec = rec["meta"]  # checkpoints keep provenance under "meta"
    return "config" in rec and config_hash(rec["config"]) == rec.get("config_hash")


def verify_artifact_hash(path):
    """Re-derive the config hash of an emitted artifact and check it matches.

    JSON files carry their config inline. JSONL epoch logs and CSV tables
    carry only the hash; it is checked against the JSON written next to them
    (``summary.json``, ``ablation.json`` or ``manifest.json``).
    """
    path = os.fspath(path)
    directory = os.path.dirname(path)
    if path.endswith(".json"):
        return _self_consistent(_load_json(path))
    sibling = next((os.path.join(directory, n) for n in ("summary.json", "ablation.json", "manifest.json")
                    if os.path.exists(os.path.join(directory, n))), None)
    if sibling is None:
        return False
    ref = _load_json(sibling)
    if not _self_consistent(ref):
        return False
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if path.endswith(".jsonl"):
        return all(json.loads(ln).get("config_hash") == ref["config_hash"] for ln in lines)
    footer = [ln.split("=", 1)[1] for ln in lines if ln.startswith("# config_hash=")]
    if footer:
        return footer == [ref["config_hash"]]
    return os.path.basename(path) in ref.get("files", [])
