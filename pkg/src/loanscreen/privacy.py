"""Anonymization and pseudonymization of loan portfolios.

Anonymization drops direct-identifier columns outright. Pseudonymization
replaces quasi-identifier categoricals with keyed tokens (same secret, same
value, same token -- so joins still work) and perturbs quasi-identifier
numerics with zero-mean Gaussian noise. The token-to-original map is the
"additional information": it is returned separately and must be stored away
from the data it unlocks.
"""

from __future__ import annotations

import csv
import hashlib
import hmac
import os
import secrets as _secrets
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data_model import FeatureSchema, Portfolio

TOKEN_PREFIX = "tok_"
_TOKEN_HEX_CHARS = 32  # 128 bits: feature-level collisions are not a practical concern


class PrivacyError(ValueError):
    """A privacy-contract violation (identifier leakage, missing key material, ...)."""


@dataclass(frozen=True)
class PseudonymizationKey:
    """Keyed-masking secret plus per-feature noise scales.

    The secret is 256 bits. ``noise_scale`` maps each quasi-identifier
    numeric feature to the standard deviation of its additive noise, in the
    feature's own units.
    """

    secret: bytes
    noise_scale: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.secret) != 32:
            raise PrivacyError("secret must be exactly 32 bytes (256 bits)")
        if self.secret == bytes(32):
            raise PrivacyError("secret must be non-zero")
        for name, scale in self.noise_scale.items():
            if not scale > 0:
                raise PrivacyError(f"noise_scale for {name!r} must be positive, got {scale}")

    @classmethod
    def generate(cls, noise_scale: Mapping[str, float] | None = None) -> "PseudonymizationKey":
        return cls(_secrets.token_bytes(32), dict(noise_scale or {}))

    @classmethod
    def from_hex(cls, hex_secret: str, noise_scale: Mapping[str, float] | None = None) -> "PseudonymizationKey":
        try:
            secret = bytes.fromhex(hex_secret.strip())
        except ValueError:
            raise PrivacyError("secret must be a hex string") from None
        return cls(secret, dict(noise_scale or {}))

    @classmethod
    def from_env_or_file(
        cls,
        env_var: str = "LOANSCREEN_SECRET",
        key_file: str | Path | None = None,
        noise_scale: Mapping[str, float] | None = None,
    ) -> "PseudonymizationKey":
        """Load the secret from an environment variable or a key file.

        The secret never travels on a command line, so it cannot leak into
        shell history or process listings.
        """
        raw = os.environ.get(env_var)
        if raw is None and key_file is not None:
            raw = Path(key_file).read_text(encoding="utf-8")
        if raw is None:
            raise PrivacyError(
                f"no pseudonymization secret: set {env_var} or provide a key file"
            )
        return cls.from_hex(raw, noise_scale)


class MaskMap:
    """Per-feature bijections between original quasi-identifier values and tokens."""

    def __init__(self, entries: Mapping[str, Mapping[str, str]] | None = None):
        self._forward: dict[str, dict[str, str]] = {}
        self._reverse: dict[str, dict[str, str]] = {}
        for feature, mapping in (entries or {}).items():
            for original, token in mapping.items():
                self.add(feature, original, token)

    def add(self, feature: str, original: str, token: str) -> None:
        fwd = self._forward.setdefault(feature, {})
        rev = self._reverse.setdefault(feature, {})
        if original in fwd and fwd[original] != token:
            raise PrivacyError(f"conflicting tokens for {feature!r} value")
        if token in rev and rev[token] != original:
            raise PrivacyError(f"token collision within feature {feature!r}")
        fwd[original] = token
        rev[token] = original

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(sorted(self._forward))

    def token_for(self, feature: str, original: str) -> str:
        return self._forward[feature][original]

    def original_for(self, feature: str, token: str) -> str:
        try:
            return self._reverse[feature][token]
        except KeyError:
            raise PrivacyError(f"token {token!r} not present in mask map for {feature!r}") from None

    def has_token(self, feature: str, token: str) -> bool:
        return token in self._reverse.get(feature, {})

    def tokens(self, feature: str) -> tuple[str, ...]:
        return tuple(self._reverse.get(feature, {}))

    def save(self, path: str | Path) -> None:
        """Write the map as sectioned two-column CSV (token, original).

        Store this file with restrictive permissions, away from any data or
        report outputs: whoever holds it can reverse the masking.
        """
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            for feature in self.features:
                writer.writerow(["#feature", feature])
                for original, token in sorted(self._forward[feature].items()):
                    writer.writerow([token, original])
        try:
            os.chmod(path, 0o600)
        except OSError:
            pass

    @classmethod
    def load(cls, path: str | Path) -> "MaskMap":
        m = cls()
        with open(path, "r", encoding="utf-8", newline="") as fh:
            feature = None
            for row in csv.reader(fh):
                if not row:
                    continue
                if row[0] == "#feature":
                    feature = row[1]
                    continue
                if feature is None:
                    raise PrivacyError(f"mask map {path} has rows before the first feature section")
                token, original = row[0], row[1]
                m.add(feature, original, token)
        return m


def anonymize(p: Portfolio) -> Portfolio:
    """Drop every direct-identifier column; everything else is untouched."""
    drop = [f.name for f in p.schema if f.privacy_class == "direct_identifier"]
    if not drop:
        return p
    return p.drop_features(drop)


def _make_token(secret: bytes, feature: str, value: str) -> str:
    # Keyed and deterministic: the token depends only on (secret, feature,
    # value). A counter suffix re-derives the token in the rare case the
    # digest happens to contain the original value as a substring.
    counter = 0
    lowered = value.lower()
    while True:
        msg = b"\x00".join([feature.encode("utf-8"), value.encode("utf-8"), str(counter).encode()])
        digest = hmac.new(secret, msg, hashlib.sha256).hexdigest()[:_TOKEN_HEX_CHARS]
        token = TOKEN_PREFIX + digest
        if lowered and lowered not in token:
            return token
        counter += 1


def pseudonymize(p: Portfolio, key: PseudonymizationKey, seed: int) -> tuple[Portfolio, MaskMap]:
    """Mask quasi-identifier categoricals and noise quasi-identifier numerics.

    Must run after :func:`anonymize`. Tokens are a deterministic function of
    the key, so re-running with the same key yields the same tokens; noise is
    zero-mean Gaussian drawn from PCG64 seeded with ``seed``. Free-class
    features pass through unchanged. Returns the transformed portfolio and
    the mask map -- keep the two apart.
    """
    direct = [f.name for f in p.schema if f.privacy_class == "direct_identifier"]
    if direct:
        raise PrivacyError(f"direct identifiers still present: {direct}; run anonymize first")

    quasi = [f for f in p.schema if f.privacy_class == "quasi_identifier"]
    mask_map = MaskMap()
    new_columns: dict[str, np.ndarray] = {}
    perturbed: list[str] = []
    rng = np.random.default_rng(seed)
    for feat in quasi:
        col = p.column(feat.name)
        if feat.kind == "numeric":
            scale = key.noise_scale.get(feat.name)
            if scale is None:
                raise PrivacyError(f"noise_scale missing for numeric quasi-identifier {feat.name!r}")
            noise = rng.normal(0.0, scale, size=len(p))
            noised = np.where(np.isnan(col), np.nan, col + noise)
            new_columns[feat.name] = noised
            perturbed.append(feat.name)
        elif feat.kind == "boolean":
            raise PrivacyError(
                f"boolean quasi-identifier {feat.name!r} is not maskable; "
                "declare it categorical in the schema if it must be tokenized"
            )
        else:
            masked = np.empty(len(p), dtype=object)
            for i, v in enumerate(col):
                if v is None:
                    masked[i] = None
                    continue
                original = str(v)
                try:
                    token = mask_map.token_for(feat.name, original)
                except KeyError:
                    token = _make_token(key.secret, feat.name, original)
                    mask_map.add(feat.name, original, token)
                masked[i] = token
            new_columns[feat.name] = masked

    out = p.replace_columns(new_columns, perturbed_features=tuple(sorted(set(p.perturbed_features) | set(perturbed))))
    return out, mask_map


def re_identify(p: Portfolio, mask_map: MaskMap) -> Portfolio:
    """Restore masked categorical values using the separately held mask map.

    Noised numerics stay noised (noising is one-way); they remain flagged in
    ``perturbed_features``. Raises if a masked token is absent from the map.
    """
    new_columns: dict[str, np.ndarray] = {}
    for feat in p.schema:
        if feat.privacy_class != "quasi_identifier" or feat.kind != "categorical":
            continue
        col = p.column(feat.name)
        restored = np.empty(len(p), dtype=object)
        for i, token in enumerate(col):
            restored[i] = None if token is None else mask_map.original_for(feat.name, str(token))
        new_columns[feat.name] = restored
    return p.replace_columns(new_columns)
