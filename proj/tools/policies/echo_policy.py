#!/usr/bin/env python3
"""Reference external policy: acknowledges the handshake and answers every
observation with a full chunk of zero actions."""
import json
import sys


def main():
    chunk = 1
    for line in sys.stdin:
        msg = json.loads(line)
        if msg.get("type") == "hello":
            chunk = int(msg.get("chunk", 1))
            reply = {"type": "ack", "protocol_version": "1.0"}
        else:
            reply = {"type": "act", "actions": [[0, 0, 0, 0, 0, 0, 0]] * chunk}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
