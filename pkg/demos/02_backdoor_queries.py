"""Backdoor queries on the graphs in ``demos/graphs``.

Conditioning on Z closes the one backdoor path of the plain confounder
graph. Once the unit-level effects of Z share a common cause, a second
backdoor path runs through them and Z no longer suffices.
"""

from pathlib import Path

from covariability import CausalDag, backdoor_blocked, backdoor_paths, d_separated, is_blocked

here = Path(__file__).parent / "graphs"

for name in ("confounder", "covariability", "confounder_intervened", "no_confounder"):
    g = CausalDag.read(here / f"{name}.dag")
    print(f"\n{name}")
    for p in backdoor_paths(g, "X", "Y"):
        state = "blocked" if is_blocked(g, p, ["Z"] if "Z" in g.nodes else []) else "open"
        print(f"  {p}  [{state} given Z]")
    given = {"Z"} if "Z" in g.nodes else set()
    print("  backdoor blocked:", backdoor_blocked(g, "X", "Y", given))

# %% conditioning on the unit-level effects as well closes every backdoor path
g = CausalDag.read(here / "covariability.dag")
print("\ngiven Z, U_X:", backdoor_blocked(g, "X", "Y", {"Z", "U_X"}))
print("U_X and U_Y d-separated given U:", d_separated(g, "U_X", "U_Y", "U"))
