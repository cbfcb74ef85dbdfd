#!/usr/bin/env python3
"""Regenerates demo/dataset.csv. Seeded; the committed CSV is its output."""
import random

random.seed(20240501)

EDUCATIONS = ["highschool", "bachelors", "masters", "phd"]
REFERRALS = ["none", "employee", "agency"]

rows = []
for _ in range(2000):
    gender = random.choice(["F", "M"])
    age = random.randint(18, 70)
    education = random.choices(EDUCATIONS, weights=[4, 5, 3, 1])[0]
    experience = round(min(random.uniform(0, 40), max(0.0, age - 18)), 1)
    skill = round(random.uniform(0, 100), 1)
    referral = random.choices(REFERRALS, weights=[6, 3, 1])[0]
    p = 0.05 + 0.45 * skill / 100 + 0.25 * experience / 40
    p += 0.15 * EDUCATIONS.index(education) / 3
    if referral == "employee":
        p += 0.05
    label = "yes" if random.random() < p else "no"
    rows.append([gender, age, education, experience, skill, referral, label])

with open("dataset.csv", "w") as f:
    f.write("gender,age,education,experience,skill,referral,hired\n")
    for r in rows:
        f.write(",".join(str(x) for x in r) + "\n")

yes = sum(1 for r in rows if r[-1] == "yes")
print(f"wrote {len(rows)} rows, {yes} positive ({yes / len(rows):.3f})")
