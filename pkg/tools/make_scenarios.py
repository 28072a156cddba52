"""Regenerate the bundled scenario files under src/topomoe/scenarios/."""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "topomoe" / "scenarios"

LEN, CAP, FF = 100.0, 20, 10.0


def lane(lid):
    return {"id": lid, "length": LEN, "capacity": CAP, "free_flow_time": FF}


def conn(src, dst, node, movement):
    return {"from": src, "to": dst, "intersection": node, "movement": movement}


def phase(movements, lo=5, hi=25):
    return {"movements": movements, "min_duration": lo, "max_duration": hi}


def route(lanes, weight=1.0):
    return {"lanes": lanes, "weight": weight}


def cross():
    lanes = [lane(l) for l in
             ["n_in", "s_in", "e_in", "w_in", "n_out", "s_out", "e_out", "w_out"]]
    doc = {
        "lanes": lanes,
        "intersections": [{
            "id": "X",
            "incoming": ["n_in", "s_in", "e_in", "w_in"],
            "outgoing": ["n_out", "s_out", "e_out", "w_out"],
        }],
        "connections": [
            conn("n_in", "s_out", "X", 0),
            conn("s_in", "n_out", "X", 1),
            conn("e_in", "w_out", "X", 2),
            conn("w_in", "e_out", "X", 3),
        ],
        "phases": {"X": [phase([0, 1], 5, 30), phase([2, 3], 5, 30)]},
        "arrivals": [
            {"lane": "n_in", "rate": 0.10, "routes": [route(["n_in", "s_out"])]},
            {"lane": "s_in", "rate": 0.10, "routes": [route(["s_in", "n_out"])]},
            {"lane": "e_in", "rate": 0.20, "routes": [route(["e_in", "w_out"])]},
            {"lane": "w_in", "rate": 0.20, "routes": [route(["w_in", "e_out"])]},
        ],
    }
    return doc


def tjunction():
    doc = {
        "lanes": [lane(l) for l in ["e_in", "e_out", "n_in", "n_out", "w_in", "w_out"]],
        "intersections": [{
            "id": "T",
            "incoming": ["e_in", "n_in", "w_in"],
            "outgoing": ["e_out", "n_out", "w_out"],
        }],
        "connections": [
            conn("w_in", "e_out", "T", 0),
            conn("e_in", "w_out", "T", 1),
            conn("n_in", "e_out", "T", 2),
            conn("n_in", "w_out", "T", 3),
            conn("e_in", "n_out", "T", 4),
            conn("w_in", "n_out", "T", 5),
        ],
        "phases": {"T": [phase([0, 1, 5]), phase([2, 3, 4])]},
        "arrivals": [
            {"lane": "w_in", "rate": 0.25, "routes": [
                route(["w_in", "e_out"], 0.85), route(["w_in", "n_out"], 0.15)]},
            {"lane": "e_in", "rate": 0.25, "routes": [
                route(["e_in", "w_out"], 0.85), route(["e_in", "n_out"], 0.15)]},
            {"lane": "n_in", "rate": 0.08, "routes": [
                route(["n_in", "e_out"], 0.5), route(["n_in", "w_out"], 0.5)]},
        ],
    }
    return doc


def _grid_core(east_of_b_in="B_e_in", east_of_b_out="B_e_out"):
    """The 2x2 grid; B's east approach is parameterized so the five-agent
    scenario can splice in the T-junction."""
    lanes = []
    for node, dirs in [("A", ["n", "w"]), ("B", ["n"]), ("C", ["s", "w"]), ("D", ["s", "e"])]:
        for d in dirs:
            lanes += [lane(f"{node}_{d}_in"), lane(f"{node}_{d}_out")]
    lanes += [lane(l) for l in ["AB", "BA", "AC", "CA", "BD", "DB", "CD", "DC"]]
    if east_of_b_in == "B_e_in":
        lanes += [lane("B_e_in"), lane("B_e_out")]
    intersections = [
        {"id": "A", "incoming": ["A_n_in", "A_w_in", "BA", "CA"],
         "outgoing": ["A_n_out", "A_w_out", "AB", "AC"]},
        {"id": "B", "incoming": ["B_n_in", east_of_b_in, "AB", "DB"],
         "outgoing": ["B_n_out", east_of_b_out, "BA", "BD"]},
        {"id": "C", "incoming": ["C_s_in", "C_w_in", "AC", "DC"],
         "outgoing": ["C_s_out", "C_w_out", "CA", "CD"]},
        {"id": "D", "incoming": ["D_s_in", "D_e_in", "BD", "CD"],
         "outgoing": ["D_s_out", "D_e_out", "DB", "DC"]},
    ]
    connections = [
        conn("A_n_in", "AC", "A", 0), conn("CA", "A_n_out", "A", 1),
        conn("A_w_in", "AB", "A", 2), conn("BA", "A_w_out", "A", 3),
        conn("B_n_in", "BD", "B", 0), conn("DB", "B_n_out", "B", 1),
        conn("AB", east_of_b_out, "B", 2), conn(east_of_b_in, "BA", "B", 3),
        conn("AC", "C_s_out", "C", 0), conn("C_s_in", "CA", "C", 1),
        conn("C_w_in", "CD", "C", 2), conn("DC", "C_w_out", "C", 3),
        conn("BD", "D_s_out", "D", 0), conn("D_s_in", "DB", "D", 1),
        conn("CD", "D_e_out", "D", 2), conn("D_e_in", "DC", "D", 3),
    ]
    phases = {n: [phase([0, 1]), phase([2, 3])] for n in "ABCD"}
    return lanes, intersections, connections, phases


def grid2x2():
    lanes, intersections, connections, phases = _grid_core()
    doc = {
        "lanes": lanes,
        "intersections": intersections,
        "connections": connections,
        "phases": phases,
        "arrivals": [
            {"lane": "A_w_in", "rate": 0.22, "routes": [route(["A_w_in", "AB", "B_e_out"])]},
            {"lane": "B_e_in", "rate": 0.22, "routes": [route(["B_e_in", "BA", "A_w_out"])]},
            {"lane": "C_w_in", "rate": 0.18, "routes": [route(["C_w_in", "CD", "D_e_out"])]},
            {"lane": "D_e_in", "rate": 0.18, "routes": [route(["D_e_in", "DC", "C_w_out"])]},
            {"lane": "A_n_in", "rate": 0.07, "routes": [route(["A_n_in", "AC", "C_s_out"])]},
            {"lane": "C_s_in", "rate": 0.07, "routes": [route(["C_s_in", "CA", "A_n_out"])]},
            {"lane": "B_n_in", "rate": 0.07, "routes": [route(["B_n_in", "BD", "D_s_out"])]},
            {"lane": "D_s_in", "rate": 0.07, "routes": [route(["D_s_in", "DB", "B_n_out"])]},
        ],
    }
    return doc


def grid2x2_tjunction():
    lanes, intersections, connections, phases = _grid_core("TB", "BT")
    lanes += [lane(l) for l in ["TB", "BT", "T_e_in", "T_e_out", "T_n_in", "T_n_out"]]
    intersections.append({
        "id": "T",
        "incoming": ["T_e_in", "T_n_in", "BT"],
        "outgoing": ["T_e_out", "T_n_out", "TB"],
    })
    connections += [
        conn("BT", "T_e_out", "T", 0),
        conn("T_e_in", "TB", "T", 1),
        conn("T_n_in", "T_e_out", "T", 2),
        conn("T_n_in", "TB", "T", 3),
        conn("T_e_in", "T_n_out", "T", 4),
        conn("BT", "T_n_out", "T", 5),
    ]
    phases["T"] = [phase([0, 1, 5]), phase([2, 3, 4])]
    doc = {
        "lanes": lanes,
        "intersections": intersections,
        "connections": connections,
        "phases": phases,
        "arrivals": [
            {"lane": "A_w_in", "rate": 0.25, "routes": [
                route(["A_w_in", "AB", "BT", "T_e_out"], 0.9),
                route(["A_w_in", "AB", "BT", "T_n_out"], 0.1)]},
            {"lane": "T_e_in", "rate": 0.25, "routes": [
                route(["T_e_in", "TB", "BA", "A_w_out"], 0.9),
                route(["T_e_in", "T_n_out"], 0.1)]},
            {"lane": "C_w_in", "rate": 0.15, "routes": [route(["C_w_in", "CD", "D_e_out"])]},
            {"lane": "D_e_in", "rate": 0.15, "routes": [route(["D_e_in", "DC", "C_w_out"])]},
            {"lane": "A_n_in", "rate": 0.06, "routes": [route(["A_n_in", "AC", "C_s_out"])]},
            {"lane": "C_s_in", "rate": 0.06, "routes": [route(["C_s_in", "CA", "A_n_out"])]},
            {"lane": "B_n_in", "rate": 0.06, "routes": [route(["B_n_in", "BD", "D_s_out"])]},
            {"lane": "D_s_in", "rate": 0.06, "routes": [route(["D_s_in", "DB", "B_n_out"])]},
            {"lane": "T_n_in", "rate": 0.06, "routes": [
                route(["T_n_in", "T_e_out"], 0.5),
                route(["T_n_in", "TB", "BA", "A_w_out"], 0.5)]},
        ],
    }
    return doc


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, builder in [("cross", cross), ("tjunction", tjunction),
                          ("grid2x2", grid2x2), ("grid2x2_tjunction", grid2x2_tjunction)]:
        path = OUT / f"{name}.json"
        path.write_text(json.dumps(builder(), indent=2) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
