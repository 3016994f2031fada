#!/usr/bin/env python3
"""Regenerates the static lookup tables used by the tweet normalizer.

    python3 tools/gen_unicode_tables.py

Writes src/textprep/html_entities.inc and src/textprep/emoji_table.inc.
The emoji table needs the `emoji` package (pip install emoji).
"""
import html.entities
import pathlib

import emoji

ROOT = pathlib.Path(__file__).resolve().parent.parent
OUT = ROOT / "src" / "textprep"


def c_literal(s: str) -> str:
    out = []
    for b in s.encode("utf-8"):
        if 0x20 <= b < 0x7F and chr(b) not in '"\\?':
            out.append(chr(b))
        else:
            out.append("\\x%02x" % b)
    # hex escapes are greedy; split the literal after each one
    text = "".join(out)
    parts = []
    i = 0
    cur = ""
    while i < len(text):
        if text.startswith("\\x", i):
            cur += text[i:i + 4]
            parts.append(cur)
            cur = ""
            i += 4
        else:
            cur += text[i]
            i += 1
    parts.append(cur)
    return " ".join('"%s"' % p for p in parts if p != "") or '""'


def write_entities():
    rows = sorted((k[:-1], v) for k, v in html.entities.html5.items() if k.endswith(";"))
    with open(OUT / "html_entities.inc", "w", encoding="utf-8") as f:
        f.write("// Generated by tools/gen_unicode_tables.py from the HTML5 named character references.\n")
        f.write("// name (without '&' and ';') -> UTF-8 replacement\n")
        for name, value in rows:
            f.write("{%s, %s},\n" % (c_literal(name), c_literal(value)))


def write_emoji():
    rows = sorted((k, v["en"]) for k, v in emoji.EMOJI_DATA.items())
    with open(OUT / "emoji_table.inc", "w", encoding="utf-8") as f:
        f.write("// Generated by tools/gen_unicode_tables.py from emoji %s (CLDR short names).\n" % emoji.__version__)
        f.write("// UTF-8 emoji sequence -> :short_name:\n")
        for seq, name in rows:
            f.write("{%s, %s},\n" % (c_literal(seq), c_literal(name)))


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    write_entities()
    write_emoji()
