#!/usr/bin/env python3
"""Extract a word-level hypernym taxonomy from WordNet 3.0.

Every palette word (after substitution) is mapped to its most frequent noun
sense. The hypernym closure of those senses is written as `child<TAB>parent`
lines. Nodes that correspond to a palette word are named by that word; all
other nodes keep their synset name (e.g. `body_of_water.n.01`). Palette words
sharing a sense with an already named node become its siblings.

usage: extract_taxonomy.py WORDNET_DICT_DIR PALETTE SUBSTITUTIONS OUT
"""
import sys

from nltk.corpus.reader.wordnet import WordNetCorpusReader


def read_pairs(path):
    pairs = {}
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            src, dst = line.split("\t")
            pairs[src] = dst
    return pairs


def palette_words(path):
    words = []
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            for w in line.split("\t")[1].split(";"):
                if w not in words:
                    words.append(w)
    return words


def main():
    wn = WordNetCorpusReader(sys.argv[1], None)
    subs = read_pairs(sys.argv[3])
    words = sorted({subs.get(w, w) for w in palette_words(sys.argv[2])})

    missing = [w for w in words if not wn.synsets(w, pos="n")]
    if missing:
        sys.exit("no noun sense for: " + ", ".join(missing))

    sense_of = {w: wn.synsets(w, pos="n")[0] for w in words}
    node_name = {}
    extra_siblings = []
    for w in words:
        s = sense_of[w]
        if s in node_name:
            extra_siblings.append((w, s))
        else:
            node_name[s] = w

    def name(s):
        return node_name.get(s, s.name())

    edges = set()
    todo = list(sense_of.values())
    seen = set()
    while todo:
        s = todo.pop()
        if s in seen:
            continue
        seen.add(s)
        for h in s.hypernyms() + s.instance_hypernyms():
            edges.add((name(s), name(h)))
            todo.append(h)
    for w, s in extra_siblings:
        parents = s.hypernyms() + s.instance_hypernyms()
        for h in parents:
            edges.add((w, name(h)))

    with open(sys.argv[4], "w") as out:
        out.write("# WordNet 3.0 hypernym edges for the ADE20K class words\n")
        for child, parent in sorted(edges):
            out.write("%s\t%s\n" % (child, parent))


if __name__ == "__main__":
    main()
