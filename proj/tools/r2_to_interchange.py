#!/usr/bin/env python3
"""Convert radare2 function/block dumps into the visunpack interchange format.

Input is one JSON document of the form

    {"functions": [
        {"name": "fcn.00401000", "offset": 4198400,
         "blocks": [
             {"addr": 4198400, "size": 6,
              "ops": [{"offset": 4198400, "bytes": "b804000000", "disasm": "mov eax, 4"}, ...]}]}]}

which is what `aflj` merged with `afbj` and `pDj <size> @ <addr>` per block
gives. With `--binary` and the r2pipe module installed the dump is taken
live instead.

Functions that do not follow the `fcn.<hex>` / `sym.imp.<name>` naming
(`entry0`, `main`, `sym.foo`) are renamed to `fcn.<entry>`.
"""

import argparse
import json
import re
import sys

_CONVENTIONAL = re.compile(r"^(fcn\.[0-9a-fA-F]+|sym\.imp\..+)$")


def dump_with_r2(binary):
    import r2pipe  # optional dependency, only for live dumps

    r2 = r2pipe.open(binary, flags=["-2"])
    r2.cmd("aaa")
    functions = []
    for fn in r2.cmdj("aflj") or []:
        blocks = []
        for blk in r2.cmdj(f"afbj @ {fn['offset']}") or []:
            ops = r2.cmdj(f"pDj {blk['size']} @ {blk['addr']}") or []
            blocks.append({"addr": blk["addr"], "size": blk["size"], "ops": ops})
        functions.append({"name": fn["name"], "offset": fn["offset"], "blocks": blocks})
    r2.quit()
    return {"functions": functions}


def function_name(fn):
    name = fn.get("name", "")
    if _CONVENTIONAL.match(name):
        return name
    return f"fcn.{int(fn['offset']):x}"


def clean_text(text):
    return " ".join(str(text).split())


def convert(dump):
    lines = []
    for fn in sorted(dump.get("functions", []), key=lambda f: int(f["offset"])):
        entry = int(fn["offset"])
        lines.append(f"F {function_name(fn)} {entry:X}")
        for blk in sorted(fn.get("blocks", []), key=lambda b: int(b["addr"])):
            ops = [op for op in blk.get("ops", []) if op.get("bytes") and op.get("type") != "invalid"]
            if not ops:
                continue
            addr = int(blk["addr"])
            lines.append(f"B {entry:X} {addr:X}")
            for op in sorted(ops, key=lambda o: int(o["offset"])):
                hex_bytes = op["bytes"].upper()
                mnemonic = clean_text(op.get("disasm", op.get("opcode", "")))
                lines.append(f"I {addr:X} {int(op['offset']):X} {hex_bytes} {mnemonic}".rstrip())
    return "\n".join(lines) + ("\n" if lines else "")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--json", help="radare2 dump as described above ('-' for stdin)")
    source.add_argument("--binary", help="run radare2 on this file through r2pipe")
    parser.add_argument("-o", "--output", help="interchange output (default: stdout)")
    args = parser.parse_args(argv)

    if args.binary:
        dump = dump_with_r2(args.binary)
    elif args.json == "-":
        dump = json.load(sys.stdin)
    else:
        with open(args.json, encoding="utf-8") as f:
            dump = json.load(f)

    text = convert(dump)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
