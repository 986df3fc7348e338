"""Soccer: synthetic sensor logs through the full pipeline and the baselines.

Run from the repository root:  python demos/soccer_baselines.py
"""
import numpy as np

from vain import soccerdata

# Constant-velocity players: PALV is exact, STATIC is off by speed * horizon.
samples = soccerdata.synthetic_samples(n_players=5, seconds=30.0, seed=0)
streams = soccerdata.Streams(label="cv")
for s in samples:
    streams.players.setdefault(s.player_id, []).append(s)
frames = soccerdata.filter_anomalies(soccerdata.resample_2hz(streams))
ex = soccerdata.build_examples(frames)
print("examples", len(ex), "players", ex.mask.shape[1])
for kind in ("STATIC", "PALV"):
    err = soccerdata.horizon_errors(soccerdata.baseline_predict(ex, kind), ex)
    print(f"{kind:6s}", np.round(err, 3))

# Team motion: players share a drifting formation, so others help prediction.
splits = {}
for k, name in enumerate(("a", "b", "c")):
    st = soccerdata.Streams(label=name)
    for s in soccerdata.synthetic_samples(11, 120.0, seed=k, mode="team"):
        st.players.setdefault(s.player_id, []).append(s)
    splits[name] = soccerdata.build_examples(soccerdata.filter_anomalies(soccerdata.resample_2hz(st)))
for train_names, held in soccerdata.leave_one_out(list(splits)):
    fit = soccerdata.LinearDisplacement().fit(soccerdata.concat([splits[n] for n in train_names]))
    test = splits[held]
    row = {k: soccerdata.horizon_errors(soccerdata.baseline_predict(test, k, fit if k == "PALAF" else None),
                                        test).mean() for k in ("STATIC", "PALV", "PALAF")}
    print("held out", held, {k: round(float(v), 2) for k, v in row.items()})
