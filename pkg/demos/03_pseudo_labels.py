"""From detector posteriors to soft region targets for a phrase."""

import numpy as np

from wsground.knowledge import Taxonomy, coverage_stats, match_phrase_class, pseudo_labels

tax = Taxonomy.parse("""
[classes]
background
person
dog
[lemmas]
puppies -> puppy
men -> man
[hypernyms]
puppy -> dog
man -> person
tree -> plant
""")

for phrase in (["a", "small", "puppy"], ["two", "men"], ["a", "tree"]):
    m = match_phrase_class(phrase, tax)
    print(" ".join(phrase), "->", m.class_name)

# one row per region, one column per detector class
det = np.array([[0.05, 0.00, 0.90],
                [0.80, 0.00, 0.20],
                [0.10, 0.85, 0.05]])
phrases = [["the", "puppy"], ["a", "man"], ["a", "tree"]]
lab = pseudo_labels(det, [match_phrase_class(p, tax) for p in phrases])
print(np.round(lab.values, 5))
print("rows with a target:", lab.mask)
print("covered / total phrases:", coverage_stats(phrases, tax))
