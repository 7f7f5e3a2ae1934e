#!/usr/bin/env python3
"""Reference stems from NLTK's Porter stemmer in original-algorithm mode.

Writes tests/data/porter_oracle.tsv (word <TAB> stem). The word list mixes
the classic examples for each rule with stems crossed with common suffixes.
"""
import sys
from pathlib import Path

from nltk.stem.porter import PorterStemmer

CLASSIC = """caresses ponies ties caress cats feed agreed plastered bled motoring sing conflated troubled
sized hopping tanned falling hissing fizzed failing filing happy sky relational conditional rational
valenci hesitanci digitizer conformabli radicalli differentli vileli analogousli vietnamization
predication operator feudalism decisiveness hopefulness callousness formaliti sensitiviti sensibiliti
triplicate formative formalize electriciti electrical hopeful goodness revival allowance inference
airliner gyroscopic adjustable defensible irritant replacement adjustment dependent adoption homologou
communism activate angulariti homologous effective bowdlerize probate rate cease controll roll
generalizations oscillators y yy ys by as is sea news generous connection connections connective
connected connecting running runs ran sandy houses rivers flies residential industrial farmland
meadow runway beach squares circles located crosses parallel strips marks""".split()

BASES = """connect run house river fly green field big hope form relate condition sense active adjust
depend adopt operate decide feud allow infer revive good call electric triple general oscillate
agree plaster bleed motor sing conflate trouble size hop tan fall hiss fizz fail file happy sky
differ analog vile radical rational nation predict digit organ nerve care pony tie cat feed""".split()

SUFFIXES = ["", "s", "es", "ed", "ing", "ly", "ness", "ful", "fulness", "ation", "ational", "ations",
            "izer", "ization", "izations", "ement", "ment", "ent", "ity", "iti", "ive", "iveness", "ize",
            "ous", "ously", "ance", "ence", "able", "ible", "er", "ers", "ism", "al", "ally", "ic", "ical",
            "icate", "ate", "ator", "ative", "alize", "aliti", "biliti", "abli", "alli", "entli", "eli",
            "ousli", "enci", "anci", "y", "ies", "e", "ion", "ions", "ant", "ou", "iviti", "ll"]


def main():
    stem = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM).stem
    words = list(dict.fromkeys(CLASSIC + [b + s for b in BASES for s in SUFFIXES]))
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[2] / "tests/data/porter_oracle.tsv"
    out.write_text("".join(f"{w}\t{stem(w)}\n" for w in words))
    print(len(words), "words")


if __name__ == "__main__":
    main()
