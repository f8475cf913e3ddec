# Recomputes matrix.json from profiles.json with the default weights.
import json, pathlib

W = {"psma_expression": 3, "liver_met": 2, "lung_met": 2, "visceral_met": 2, "prior_chemo": 2,
     "ecog": 1, "bone_met": 1, "tumor_burden": 1, "psa": 1, "alp": 1, "hemoglobin": 1}

def band(field, x):
    if field == "psa":
        return 0 if x < 10 else (1 if x <= 100 else 2)
    if field == "alp":
        return 0 if x <= 129 else 1
    return 0 if x < 10 else (1 if x <= 12 else 2)

def known(v):
    return v is not None and v != "unknown"

def sim(a, b):
    num = den = 0.0
    for f, w in W.items():
        x, y = a.get(f), b.get(f)
        if not (known(x) and known(y)):
            continue
        den += w
        if f == "ecog":
            num += w if abs(x - y) <= 1 else 0
        elif f in ("psa", "alp", "hemoglobin"):
            num += w if band(f, x) == band(f, y) else 0
        else:
            num += w if x == y else 0
    return num / den if den else 0.0

here = pathlib.Path(__file__).parent
profiles = json.loads((here / "profiles.json").read_text())
matrix = [[sim(a, b) for b in profiles] for a in profiles]
(here / "matrix.json").write_text(json.dumps(matrix, indent=1) + "\n")
