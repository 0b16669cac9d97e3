#!/usr/bin/env python3
"""Regenerates the bundled desk dataset (train / holdout / canonical JSONL).

Each tool has a family of query templates filled from small vehicle,
component and symptom lexicons. Gold entities come straight from the slot
fills, so they are exact by construction. Holdout queries use templates
that never appear in training.

    python3 generate_desk.py   # writes desk/*.jsonl next to this script
"""

import json
import random
from pathlib import Path

RNG = random.Random(20240611)
OUT = Path(__file__).resolve().parent / "desk"

VEHICLES = [
    ("Toyota", "Camry"), ("Toyota", "RAV4"), ("Toyota", "Tacoma"), ("Toyota", "Highlander"),
    ("Honda", "Civic"), ("Honda", "CR-V"), ("Honda", "Pilot"), ("Honda", "Odyssey"),
    ("Ford", "F-150"), ("Ford", "Escape"), ("Ford", "Explorer"), ("Ford", "Focus"),
    ("Chevrolet", "Silverado"), ("Chevrolet", "Equinox"), ("Chevrolet", "Cruze"), ("Chevrolet", "Tahoe"),
    ("Nissan", "Altima"), ("Nissan", "Rogue"), ("Nissan", "Sentra"),
    ("Subaru", "Outback"), ("Subaru", "Impreza"), ("Subaru", "Crosstrek"),
    ("Kia", "Sorento"), ("Kia", "Soul"), ("Kia", "Telluride"),
    ("Hyundai", "Elantra"), ("Hyundai", "Sonata"), ("Hyundai", "Tucson"),
    ("Mazda", "CX-5"), ("Mazda", "Mazda3"),
    ("Jeep", "Wrangler"), ("Jeep", "Grand Cherokee"),
    ("Volkswagen", "Jetta"), ("Volkswagen", "Tiguan"),
    ("Dodge", "Charger"), ("Ram", "1500"), ("GMC", "Sierra"),
    ("BMW", "X5"), ("Lexus", "RX 350"), ("Audi", "A4"),
]
YEARS = list(range(2008, 2024))
ISSUES = [
    "transmission shudder", "excessive oil consumption", "engine stalling", "brake noise",
    "check engine light", "power steering failure", "hard starting", "engine overheating",
    "AC blowing warm air", "water leak", "steering wheel vibration", "battery drain",
    "fuel pump failure", "timing chain rattle", "CVT hesitation", "sunroof leak",
]
SAFETY_ISSUES = [
    "airbag failure", "seat belt failure", "brake failure", "fuel leak", "loss of power",
    "headlight failure", "electrical fire", "steering failure", "engine stalling",
    "sudden acceleration", "rear camera failure", "tire separation",
]
SYMPTOMS = [
    "rough idle", "a grinding noise when braking", "a burning smell", "a clunking noise over bumps",
    "white smoke from the exhaust", "a squealing belt noise", "a shaky steering wheel",
    "a flashing check engine light", "a sweet smell from the vents", "slipping gears",
    "a rattling noise at startup", "a soft brake pedal", "dim headlights", "a whining noise when turning",
]
COMPONENTS = [
    "brake pads", "spark plugs", "water pump", "alternator", "timing belt", "oil filter", "starter",
    "radiator", "fuel pump", "serpentine belt", "wheel bearing", "brake rotors", "ignition coil",
    "thermostat", "cabin air filter", "struts", "control arm", "oxygen sensor", "headlight bulb",
    "wiper blades", "battery", "catalytic converter",
]
SPEC_TOPICS = [
    ("torque spec for the lug nuts", "lug nuts"), ("oil capacity", None),
    ("torque spec for the spark plugs", "spark plugs"), ("coolant capacity", None),
    ("brake pad thickness limit", "brake pads"), ("tire pressure spec", None),
    ("firing order", None), ("torque spec for the caliper bolts", "caliper bolts"),
    ("transmission fluid capacity", None), ("spark plug gap", "spark plugs"),
]
SYSTEM_JOBS = [("bleed", "brake system"), ("flush", "cooling system"),
               ("recharge", "air conditioning system"), ("depressurize", "fuel system"),
               ("inspect", "exhaust system"), ("test", "charging system")]
NICKNAMES = {"Chevrolet": "Chevy", "Volkswagen": "VW"}
BRANDS = ["Bosch", "NGK", "Denso", "ACDelco", "Motorcraft", "Brembo", "Akebono", "Moog"]
ACTIONS = ["replace", "install", "remove", "repair", "change"]
MILEAGES = ["30,000", "60,000", "90,000", "15,000", "45,000", "100,000", "75,000", "120,000"]
PATTERNS = ["severe", "towing", "city", "highway"]


def pick(seq):
    return RNG.choice(seq)


def car():
    make, model = pick(VEHICLES)
    return make, model, pick(YEARS)


def say(make):
    """Sometimes writes the make by its nickname; gold keeps the full name."""
    nick = NICKNAMES.get(make)
    return nick if nick and RNG.random() < 0.5 else make


def ents(tool, **kw):
    fields = {
        "tsb": ["make", "model", "year", "issue"],
        "nhtsa": ["make", "model", "year", "mileage", "issue"],
        "techdoc": ["make", "model", "year", "query_type", "component", "system"],
        "smart_insights": ["make", "model", "year", "mileage", "issue"],
        "parts_catalog": ["make", "model", "year", "component", "brand", "warranty", "pnc"],
        "repair_to_parts": ["make", "model", "year", "labor_action", "component"],
        "service_to_parts": ["make", "model", "year", "service_name", "service_type",
                              "service_unit", "driving_pattern"],
        "others": [],
    }[tool]
    return {f: kw.get(f) for f in fields}


# Each generator returns (query, entities). `h` selects holdout-only phrasings.

def tsb(t):
    mk, md, yr = car()
    issue = pick(ISSUES)
    forms = [
        (f"Is there a TSB for {issue} on the {yr} {mk} {md}?", True),
        (f"Any technical service bulletins about {issue} for a {yr} {mk} {md}?", True),
        (f"Show me TSBs related to {issue} on my {mk} {md} {yr}", True),
        (f"Did {mk} publish a service bulletin about {issue} for the {yr} {md}?", True),
        (f"Find manufacturer bulletins covering {issue} in {yr} {mk} {md} models", True),
        (f"Is there any TSB about {issue} in the {yr} {mk} {md}?", True),
        (f"Are there any service bulletins about {issue} in my {yr} {mk} {md}?", True),
        (f"Pull up the bulletin for {issue} affecting the {mk} {md} {yr}", True),
        (f"Is {issue} on a {yr} {mk} {md} covered by a technical service bulletin?", True),
        (f"What TSBs exist for the {yr} {mk} {md} regarding {issue}?", True),
    ]
    hold = [
        (f"Has the OEM issued a TSB regarding {issue} in a {yr} {mk} {md}?", True),
        (f"Looking for the technical bulletin on {issue}, {yr} {mk} {md}", True),
    ]
    q, _ = pick(hold if t else forms)
    return q, ents("tsb", make=mk, model=md, year=yr, issue=issue)


def nhtsa(t):
    mk, md, yr = car()
    issue = pick(SAFETY_ISSUES)
    miles = pick(MILEAGES) + " miles" if RNG.random() < 0.3 else None
    tail = f" with {miles}" if miles else ""
    forms = [
        f"Are there any recalls for {issue} on the {yr} {mk} {md}{tail}?",
        f"Any complaints or recalls about {issue} in a {yr} {mk} {md}{tail}?",
        f"Show NHTSA complaints about {issue} for the {mk} {md} {yr}",
        f"Has there been a safety recall for {issue} on {yr} {mk} {md} vehicles?",
        f"What do owners report to NHTSA about {issue} in the {yr} {mk} {md}{tail}?",
        f"Check for open recalls on my {yr} {mk} {md}{tail}, I had {issue}",
        f"Were there recall campaigns for {issue} affecting {yr} {mk} {md} owners?",
        f"Look up safety complaints filed for {issue} on the {mk} {md} {yr}",
    ]
    hold = [
        f"Is my {yr} {mk} {md}{tail} under any open recall for {issue}?",
        f"How many owner complaints were filed about {issue} on a {yr} {mk} {md}?",
    ]
    q = pick(hold if t else forms)
    if "NHTSA complaints" in q:
        miles = None
    return q, ents("nhtsa", make=mk, model=md, year=yr, mileage=miles, issue=issue)


def techdoc(t):
    mk, md, yr = car()
    m = say(mk)
    roll = RNG.random()
    if roll < 0.5:
        comp = pick(COMPONENTS)
        act = pick(["replace", "remove", "install"])
        forms = [
            f"How to {act} the {comp} on a {yr} {m} {md}?",
            f"How do I {act} the {comp} in my {yr} {m} {md}? I need the steps.",
            f"Show me the service manual procedure to {act} the {comp} on a {m} {md} {yr}",
            f"How to {act} the {comp} step by step, {yr} {m} {md}",
            f"How to {act} {comp} for my {m} {md} {yr}.",
        ]
        hold = [f"Walk me through the steps to {act} the {comp}, {yr} {m} {md}",
                f"Walk me through how to {act} the {comp} on a {yr} {m} {md}"]
        q = pick(hold if t else forms)
        return q, ents("techdoc", make=mk, model=md, year=yr, query_type="procedure", component=comp)
    if roll < 0.8:
        topic, comp = pick(SPEC_TOPICS)
        forms = [
            f"What is the {topic} on a {yr} {m} {md}?",
            f"What is the factory {topic} for the {m} {md} {yr}?",
            f"Look up the {topic} in the service manual for my {yr} {m} {md}",
        ]
        if comp:
            forms.append(f"What is the torque spec for installing {comp} on a {yr} {m} {md}?")
            forms.append(f"What torque should I use when installing the {comp} on my {m} {md} {yr}?")
        hold = [f"What is the correct {topic} of a {yr} {m} {md} according to the manual?",
                f"Need the {topic} from the manual, {yr} {m} {md}"]
        q = pick(hold if t else forms)
        return q, ents("techdoc", make=mk, model=md, year=yr, query_type="specification", component=comp)
    act, system = pick(SYSTEM_JOBS)
    forms = [f"How to {act} the {system} on a {yr} {m} {md}?",
             f"What is the procedure to {act} the {system} in my {yr} {m} {md}?"]
    hold = [f"Explain how to {act} the {system} of a {yr} {m} {md}"]
    q = pick(hold if t else forms)
    return q, ents("techdoc", make=mk, model=md, year=yr, query_type="procedure", system=system)


def smart_insights(t):
    mk, md, yr = car()
    sym = pick(SYMPTOMS)
    miles = pick(MILEAGES) + " miles" if RNG.random() < 0.3 else None
    at = f" at {miles}" if miles else ""
    forms = [
        f"My {yr} {mk} {md} has {sym}{at}. What could be causing it?",
        f"Why does my {mk} {md} {yr} have {sym}?",
        f"My car has {sym}. What could be the issue in a {yr} {mk} {md}?",
        f"What is wrong if my {yr} {mk} {md} has {sym}{at}?",
        f"Diagnose {sym} on a {yr} {mk} {md}{at}",
        f"What causes {sym} in a {yr} {mk} {md}?",
        f"My {mk} {md} {yr} started showing {sym}{at}, any idea why?",
        f"Troubleshoot {sym} for a {yr} {mk} {md}",
    ]
    hold = [
        f"I noticed {sym} in my {yr} {mk} {md}{at}, what are the likely causes?",
        f"Possible reasons my {yr} {mk} {md} has {sym}?",
    ]
    q = pick(hold if t else forms)
    if "Why does" in q:
        miles = None
    issue = sym[2:] if sym.startswith("a ") else sym
    return q, ents("smart_insights", make=mk, model=md, year=yr, mileage=miles, issue=issue)


def parts_catalog(t):
    mk, md, yr = car()
    comp = pick(COMPONENTS)
    brand = pick(BRANDS) if RNG.random() < 0.35 else None
    b = f"{brand} " if brand else ""
    forms = [
        f"Show me the part number and price for {b}{comp} for a {yr} {mk} {md}.",
        f"How much do {b}{comp} cost for a {yr} {mk} {md}? Need the part number.",
        f"Look up the PNC and price of the {comp} for my {mk} {md} {yr}",
        f"Get me a price quote and part number for {b}{comp}, {yr} {mk} {md}",
        f"Find the OEM part number for the {comp} on a {yr} {mk} {md}",
        f"Do you have {b}{comp} in stock for a {yr} {mk} {md}? What's the price?",
        f"Catalog lookup for {b}{comp} fitting a {mk} {md} {yr}",
    ]
    hold = [
        f"What's the catalog price and part number of {b}{comp} for a {yr} {mk} {md}?",
        f"Part number lookup: {b}{comp} for {yr} {mk} {md}, with pricing",
    ]
    q = pick(hold if t else forms)
    if f"{b}{comp}" not in q:
        brand = None
    return q, ents("parts_catalog", make=mk, model=md, year=yr, component=comp, brand=brand)


def repair_to_parts(t):
    mk, md, yr = car()
    comp = pick(COMPONENTS)
    act = pick(ACTIONS)
    forms = [
        f"What parts are needed to {act} the {comp} in a {yr} {mk} {md}?",
        f"{act.capitalize()} {comp} for my {mk} {md} {yr}.",
        f"Which parts do I need to {act} the {comp} on my {yr} {mk} {md}?",
        f"I want to {act} the {comp} on a {yr} {mk} {md}, what parts should I order?",
        f"Parts list to {act} the {comp} for a {yr} {mk} {md}",
        f"Which components should I buy for the job to {act} the {comp} on a {yr} {mk} {md}?",
        f"Need to {act} the {comp} in my {mk} {md} {yr}; what parts go with that repair?",
    ]
    hold = [
        f"Going to {act} the {comp} on my {yr} {mk} {md}, which parts will that job need?",
        f"What do I need to buy to {act} the {comp} in my {yr} {mk} {md}?",
    ]
    q = pick(hold if t else forms)
    return q, ents("repair_to_parts", make=mk, model=md, year=yr, labor_action=act, component=comp)


def service_to_parts(t):
    mk, md, yr = car()
    with_year = RNG.random() < 0.7
    y = f"{yr} " if with_year else ""
    if RNG.random() < 0.75:
        m = pick(MILEAGES)
        name, stype, unit = f"{m}-mile service", "mileage", "miles"
    else:
        n = pick(["6", "12", "24", "36"])
        name, stype, unit = f"{n}-month service", "time", "months"
    pattern = pick(PATTERNS) if RNG.random() < 0.3 else None
    drv = f" with {pattern} driving" if pattern else ""
    forms = [
        f"What parts do I need for the {name} on my {y}{mk} {md}?",
        f"Parts required for the {name} of a {y}{mk} {md}{drv}",
        f"Which parts are included in the {name} for a {y}{mk} {md}?",
        f"I am due for the {name} on my {y}{mk} {md}{drv}. What parts should I get?",
        f"List the maintenance parts for a {name} on a {y}{mk} {md}",
        f"What gets replaced during the {name} on a {y}{mk} {md}{drv}?",
        f"Maintenance schedule parts for the {name}, {y}{mk} {md}",
    ]
    hold = [
        f"Scheduled maintenance: {name} coming up on my {y}{mk} {md}{drv}, what parts?",
        f"What should be replaced at the {name} on a {y}{mk} {md}{drv}?",
    ]
    q = pick(hold if t else forms)
    if drv and drv not in q:
        pattern = None
    return q, ents("service_to_parts", make=mk, model=md, year=yr if with_year else None,
                   service_name=name, service_type=stype, service_unit=unit,
                   driving_pattern=pattern)


OTHERS_TRAIN = [
    "What are the pros and cons of synthetic oil versus conventional oil?",
    "Is it worth buying an extended warranty on a used car?",
    "Which is better, OEM parts or aftermarket parts?",
    "What are the disadvantages of buying aftermarket wheels?",
    "How do electric cars compare to hybrids for daily commuting?",
    "What's the best way to sell my car privately?",
    "Tell me a joke about mechanics.",
    "What is the weather going to be like tomorrow?",
    "Should I lease or buy my next vehicle?",
    "What are the downsides of choosing cheap tires over premium brands?",
    "Can you recommend a good car insurance company?",
    "How do I become an automotive technician?",
    "What are the benefits of ceramic coating for paint?",
    "Why are used car prices so high right now?",
    "Who makes the most reliable trucks?",
    "Is it safe to use a generic brand of motor oil instead of the dealer brand?",
    "What does the future of self-driving cars look like?",
    "Hello, how are you today?",
    "What are the negative effects of running remanufactured parts compared to new ones?",
    "Recommend a good podcast about cars.",
]
OTHERS_HOLD = [
    "Are aftermarket headlights a bad idea compared to factory ones?",
    "What is your opinion on buying a car at an auction?",
    "How much should I tip my mechanic?",
    "Do premium fuels really make a difference for regular engines?",
    "Can you help me write an email to my landlord?",
]

GENERATORS = {
    "tsb": tsb, "nhtsa": nhtsa, "techdoc": techdoc, "smart_insights": smart_insights,
    "parts_catalog": parts_catalog, "repair_to_parts": repair_to_parts,
    "service_to_parts": service_to_parts,
}

CANONICAL = [
    ("Is there any TSB about spark plug fouling in the 2015 Subaru Forester?", "tsb",
     {"make": "Subaru", "model": "Forester", "year": 2015, "issue": "spark plug fouling"}),
    ("Are there any complaints or recalls about spark plug misfires in 2017 Kia Optima?", "nhtsa",
     {"make": "Kia", "model": "Optima", "year": 2017, "mileage": None, "issue": "spark plug misfires"}),
    ("What is the torque spec for installing spark plugs on a 2016 Chevy Malibu?", "techdoc",
     {"make": "Chevrolet", "model": "Malibu", "year": 2016, "query_type": "specification",
      "component": "spark plugs", "system": None}),
    ("My car has rough idle and stalling. What could be the issue in a 2020 Corolla?", "smart_insights",
     {"make": None, "model": "Corolla", "year": 2020, "mileage": None, "issue": "rough idle and stalling"}),
    ("Show me the part number and price for spark plugs for a 2019 Ford Fusion.", "parts_catalog",
     {"make": "Ford", "model": "Fusion", "year": 2019, "component": "spark plugs", "brand": None,
      "warranty": None, "pnc": None}),
    ("What parts are needed to replace spark plugs in a 2018 Honda Accord?", "repair_to_parts",
     {"make": "Honda", "model": "Accord", "year": 2018, "labor_action": "replace",
      "component": "spark plugs"}),
    ("What parts do I need for the 30,000-mile service on my Toyota Camry?", "service_to_parts",
     {"make": "Toyota", "model": "Camry", "year": None, "service_name": "30,000-mile service",
      "service_type": "mileage", "service_unit": "miles", "driving_pattern": None}),
    ("What are the negative aspects of choosing an aftermarket brake pad over an OEM part?", "others", {}),
]


# Fixed train rows on brake pads for a different vehicle, so that the
# component is not only seen in catalog lookups.
ANCHORS = {
    "techdoc": [
        ("How to replace the brake pads on a 2017 Honda Civic?",
         ents("techdoc", make="Honda", model="Civic", year=2017, query_type="procedure",
              component="brake pads")),
    ],
    "repair_to_parts": [
        ("Replace brake pads for my Honda Civic 2017.",
         ents("repair_to_parts", make="Honda", model="Civic", year=2017, labor_action="replace",
              component="brake pads")),
    ],
}


def norm(q):
    return " ".join("".join(c if c.isalnum() else " " for c in q.lower()).split())


def main():
    seen = {norm(q) for q, _, _ in CANONICAL}
    train, hold = [], []
    for tool, gen in GENERATORS.items():
        for split, n, out in (("train", 20, train), ("holdout", 5, hold)):
            made = 0
            if split == "train":
                for q, e in ANCHORS.get(tool, []):
                    seen.add(norm(q))
                    out.append({"query": q, "tool_category": tool, "entities": e})
                    made += 1
            while made < n:
                q, e = gen(split == "holdout")
                if norm(q) in seen:
                    continue
                seen.add(norm(q))
                out.append({"query": q, "tool_category": tool, "entities": e})
                made += 1
    for q in OTHERS_TRAIN:
        train.append({"query": q, "tool_category": "others", "entities": {}})
    for q in OTHERS_HOLD:
        hold.append({"query": q, "tool_category": "others", "entities": {}})
    OUT.mkdir(exist_ok=True)
    for name, rows in (("train", train), ("holdout", hold)):
        with open(OUT / f"{name}.jsonl", "w") as f:
            for r in rows:
                f.write(json.dumps(r) + "\n")
    with open(OUT / "canonical.jsonl", "w") as f:
        for q, t, e in CANONICAL:
            f.write(json.dumps({"query": q, "tool_category": t, "entities": e}) + "\n")
    print(len(train), len(hold), len(CANONICAL))


if __name__ == "__main__":
    main()
