"""Per-language protected abbreviations for the sentence splitter.

A trailing period after any of these never ends a sentence.  Single
uppercase initials ("A.", "B.", ...) are included for every Latin-script
language so name initials do not split.  Chinese needs none: its
terminators are unambiguous.
"""

from __future__ import annotations

import string

_INITIALS = {c + "." for c in string.ascii_uppercase}

ABBREVIATIONS: dict[str, frozenset[str]] = {
    "it": frozenset(_INITIALS | {
        "sig.", "Sig.", "sig.ra", "Sig.ra", "dott.", "Dott.", "prof.", "Prof.",
        "avv.", "Avv.", "ecc.", "etc.", "pag.", "cap.", "vol.", "art.",
        "S.", "SS.", "n.", "N.",
    }),
    "en": frozenset(_INITIALS | {
        "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Rev.", "Hon.", "St.",
        "etc.", "vs.", "e.g.", "i.e.", "Jr.", "Sr.", "No.", "Vol.", "Ch.",
    }),
    "es": frozenset(_INITIALS | {
        "Sr.", "Sra.", "Srta.", "Dr.", "Dra.", "D.", "Da.", "Ud.", "Uds.",
        "etc.", "pág.", "cap.", "núm.",
    }),
    "fr": frozenset(_INITIALS | {
        "M.", "MM.", "Mme.", "Mlle.", "Dr.", "St.", "Ste.", "etc.",
        "p.", "ch.", "n°.",
    }),
    "de": frozenset(_INITIALS | {
        "Hr.", "Fr.", "Dr.", "Prof.", "St.", "usw.", "z.B.", "d.h.",
        "bzw.", "Nr.", "S.", "Bd.", "Kap.",
    }),
    "nl": frozenset(_INITIALS | {
        "dhr.", "mevr.", "dr.", "prof.", "St.", "enz.", "bijv.", "nr.",
        "blz.", "o.a.",
    }),
    "pl": frozenset(_INITIALS | {
        "np.", "itd.", "itp.", "tzw.", "dr.", "prof.", "św.", "str.",
        "nr.", "r.", "w.",
    }),
    "ru": frozenset(_INITIALS | {
        "г.", "гг.", "т.е.", "т.д.", "т.п.", "др.", "проф.", "стр.",
        "см.", "им.", "св.",
    }),
    "zh": frozenset(),
}


def abbreviations_for(language: str) -> frozenset[str]:
    """Look up by BCP-47 primary subtag; unknown languages get initials only."""
    primary = language.split("-")[0].lower()
    return ABBREVIATIONS.get(primary, frozenset(_INITIALS))
