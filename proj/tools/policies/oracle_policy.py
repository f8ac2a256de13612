#!/usr/bin/env python3
"""Reference external grasping policy.

Usage: oracle_policy.py OBJECT X Y Z [AX AY AZ]

Servos to a pre-grasp point 5 cm back along the approach direction, descends
to the grasp point (both given in the object frame), closes the gripper and
then holds still.
"""
import json
import math
import sys

STEP = 0.01
PRE_GRASP = 0.05
TOLERANCE = 2e-4


def rotate(q, v):
    w, x, y, z = q
    # v' = v + 2w (u x v) + 2 u x (u x v), u = (x, y, z)
    ux = (y * v[2] - z * v[1], z * v[0] - x * v[2], x * v[1] - y * v[0])
    uux = (y * ux[2] - z * ux[1], z * ux[0] - x * ux[2], x * ux[1] - y * ux[0])
    return tuple(v[i] + 2 * w * ux[i] + 2 * uux[i] for i in range(3))


def servo(ee, target):
    d = [target[i] - ee[i] for i in range(3)]
    n = math.sqrt(sum(c * c for c in d))
    if n < TOLERANCE:
        return None
    s = min(1.0, STEP / n)
    return [c * s for c in d] + [0, 0, 0, 0]


def main():
    obj = sys.argv[1]
    point = tuple(float(v) for v in sys.argv[2:5])
    approach = tuple(float(v) for v in sys.argv[5:8]) if len(sys.argv) >= 8 else (0.0, 0.0, -1.0)
    phase = 0
    for line in sys.stdin:
        msg = json.loads(line)
        if msg.get("type") == "hello":
            sys.stdout.write(json.dumps({"type": "ack", "protocol_version": "1.0"}) + "\n")
            sys.stdout.flush()
            continue
        pose = msg["poses"][obj]
        q = pose[3:7]
        grasp = [pose[i] + c for i, c in enumerate(rotate(q, point))]
        a = rotate(q, approach)
        pre = [grasp[i] - PRE_GRASP * a[i] for i in range(3)]
        ee = msg["ee"][:3]
        action = [0, 0, 0, 0, 0, 0, 0]
        if phase == 0:
            action = servo(ee, pre)
            if action is None:
                phase = 1
        if phase == 1:
            action = servo(ee, grasp)
            if action is None:
                phase = 2
                action = [0, 0, 0, 0, 0, 0, 1]
        elif phase == 2 and action is None:
            action = [0, 0, 0, 0, 0, 0, 0]
        sys.stdout.write(json.dumps({"type": "act", "actions": [action]}) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
