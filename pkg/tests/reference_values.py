"""Published figures used as metric inputs and expected outputs.

Rows are (dataset, cost $/1k, accuracy %, printed CER[, printed PCE]).
"""

# single-image prompting, one row per evaluation dataset
ZERO_SHOT = [
    ("ImageNet-1K", 51.30, 62.0, 4.30),
    ("Caltech101", 7.24, 95.5, 9.08),
    ("OxfordPets", 4.99, 92.6, 10.09),
    ("StanfordCars", 21.10, 58.3, 5.26),
    ("Flowers102", 8.58, 70.6, 7.52),
    ("Food101", 8.09, 80.1, 8.12),
    ("Aircraft", 8.61, 36.0, 5.37),
    ("SUN397", 21.55, 57.7, 5.20),
    ("DTD", 5.07, 59.1, 8.17),
    ("EuroSAT", 3.45, 36.2, 7.19),
    ("UCF101", 8.22, 81.6, 8.14),
]

# (n, dataset, cost, acc_random, acc_baseline, cer_random, cer_baseline, pce_random, pce_baseline)
COLLAGE = [
    (2, "ImageNet-1K", 12.83, 39.4, 45.7, 4.99, 5.38, 5.49, 10.60),
    (2, "Caltech101", 1.81, 88.4, 90.8, 13.37, 13.52, 2.15, 3.18),
    (2, "OxfordPets", 1.25, 70.1, 71.8, 13.20, 13.34, 1.18, 1.20),
    (2, "StanfordCars", 5.28, 29.8, 32.0, 5.65, 5.88, 1.74, 1.83),
    (2, "Flowers102", 2.15, 49.8, 51.1, 9.75, 9.88, 1.36, 1.39),
    (2, "Food101", 2.02, 62.2, 64.2, 11.05, 11.21, 1.40, 1.46),
    (2, "Aircraft", 2.15, 18.5, 17.7, 5.57, 5.42, 1.45, 1.42),
    (2, "SUN397", 5.39, 46.5, 48.7, 7.12, 7.29, 4.23, 6.02),
    (2, "DTD", 1.27, 48.6, 52.0, 11.02, 11.40, 1.44, 1.71),
    (2, "EuroSAT", 0.86, 42.9, 53.4, 11.21, 12.52, 1.47, 1.16),
    (2, "UCF101", 2.06, 55.2, 58.1, 10.39, 10.65, 1.26, 1.30),
    (3, "ImageNet-1K", 5.70, 28.1, 33.7, 5.33, 5.90, 3.84, 5.01),
    (3, "Caltech101", 0.80, 79.1, 85.4, 15.26, 15.79, 1.48, 1.89),
    (3, "OxfordPets", 0.55, 53.2, 59.5, 13.45, 14.20, 1.12, 1.14),
    (3, "StanfordCars", 2.34, 11.6, 14.7, 3.96, 4.68, 1.49, 1.54),
    (3, "Flowers102", 0.95, 38.4, 43.8, 10.38, 11.12, 1.27, 1.33),
    (3, "Food101", 0.90, 39.9, 46.8, 10.71, 11.63, 1.20, 1.24),
    (3, "Aircraft", 0.96, 7.0, 10.3, 3.32, 4.52, 1.30, 1.35),
    (3, "SUN397", 2.39, 27.6, 36.3, 6.89, 8.03, 1.89, 2.45),
    (3, "DTD", 0.56, 37.5, 44.1, 11.22, 12.21, 1.23, 1.35),
    (3, "EuroSAT", 0.38, 30.4, 39.7, 10.50, 12.14, 1.70, 2.40),
    (3, "UCF101", 0.91, 37.9, 44.0, 10.39, 11.24, 1.18, 1.21),
]

REFERENCE = {name: (cost, acc) for name, cost, acc, _ in ZERO_SHOT}

# $ per 1k images by grid side
COST_BY_SIDE = {1: 51.30, 2: 12.83, 3: 5.70, 4: 3.21, 5: 2.05}

# tokens in each dataset's category list
LABEL_TOKENS = {
    "ImageNet-1K": 4834, "Caltech101": 428, "OxfordPets": 203, "StanfordCars": 1814,
    "Flowers102": 562, "Food101": 513, "Aircraft": 565, "SUN397": 1859, "DTD": 211,
    "EuroSAT": 49, "UCF101": 526,
}
