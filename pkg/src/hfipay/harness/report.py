"""Experiment report: one long-format CSV plus PNG figures next to it."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Union

from ..relay import Mode
from .attacks import attack_cross_sender, attack_post_claim_linkage, attack_relay_compromise, check_lemma1
from .games import game_g1, game_g2
from .plotting import advantage_figure, linkage_figure

THRESHOLD = 0.02
G1_ADVERSARIES = ("random", "metadata", "equality", "byte-correlation", "leaked-handle", "omniscient")
G2_ADVERSARIES = ("random", "metadata", "equality", "byte-correlation", "leaked-handle", "omniscient")
FIELDS = ("experiment", "subject", "metric", "value")


def build_report(out: Union[str, Path], trials: int = 2000, seed: int = 0, mode: Mode = Mode.BASELINE,
                 epoch_len: Optional[int] = None, lemma_trials: int = 200) -> dict:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    games = []
    for name in G1_ADVERSARIES:
        games.append(game_g1(name, trials, seed, mode, epoch_len).to_json())
    for name in G2_ADVERSARIES:
        games.append(game_g2(name, trials, seed, True, mode, epoch_len).to_json())
    games.append(game_g2("metadata", trials, seed, False, mode, epoch_len).to_json())
    for g in games:
        for metric in ("trials", "successes", "success_rate", "advantage", "ci_half_width"):
            rows.append({"experiment": g["game"], "subject": g["adversary"], "metric": metric, "value": g[metric]})

    lemma = check_lemma1(lemma_trials, seed)
    rows.append({"experiment": "lemma1", "subject": "honest", "metric": "equal_rate", "value": lemma["honest_rate"]})
    for kind, r in lemma["substitutions"].items():
        rows.append({"experiment": "lemma1", "subject": kind, "metric": "stop_rate", "value": r["stop_rate"]})

    linkage = attack_post_claim_linkage(seed=seed)
    for metric in ("ari_id_com", "ari_dest_only", "ari_pre_claim"):
        rows.append({"experiment": "post-claim-linkage", "subject": "observer", "metric": metric,
                     "value": round(linkage[metric], 6)})
    for row in attack_cross_sender(seed=seed)["rows"]:
        for metric in ("same_epoch", "k_equal", "k_on_chain"):
            rows.append({"experiment": "cross-sender", "subject": f"epoch_len={row['epoch_len']}", "metric": metric,
                         "value": int(row[metric])})
    for purge in (False, True):
        r = attack_relay_compromise(seed=seed, purge_first=purge)
        rows.append({"experiment": "relay-compromise", "subject": "purged" if purge else "retained",
                     "metric": "link_rate", "value": r["link_rate"]})

    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    stem = out.with_suffix("")
    figures = [
        advantage_figure(games, THRESHOLD, Path(f"{stem}_advantage.png")),
        linkage_figure({"id_com": linkage["ari_id_com"], "dest only": linkage["ari_dest_only"],
                        "pre-claim rho": linkage["ari_pre_claim"]}, Path(f"{stem}_linkage.png")),
    ]
    return {"csv": str(out), "figures": [str(f) for f in figures], "rows": len(rows)}
