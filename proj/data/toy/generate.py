#!/usr/bin/env python3
"""Regenerates the toy corpus in this directory. Output is deterministic."""
import json
import os

HERE = os.path.dirname(os.path.abspath(__file__))

ENTITIES = [
    ("E00", "Eiffel Tower", "Paris", "1889", "Gustave Eiffel"),
    ("E01", "Big Ben", "London", "1859", "Augustus Pugin"),
    ("E02", "Colosseum", "Rome", "80", "Vespasian"),
    ("E03", "Taj Mahal", "Agra", "1653", "Ustad Ahmad Lahauri"),
    ("E04", "Sydney Opera House", "Sydney", "1973", "Jorn Utzon"),
    ("E05", "Golden Gate Bridge", "San Francisco", "1937", "Joseph Strauss"),
    ("E06", "Sagrada Familia", "Barcelona", "2026", "Antoni Gaudi"),
    ("E07", "Burj Khalifa", "Dubai", "2010", "Adrian Smith"),
    ("E08", "Leaning Tower", "Pisa", "1372", "Bonanno Pisano"),
    ("E09", "Brandenburg Gate", "Berlin", "1791", "Carl Gotthard Langhans"),
]

FACETS = [
    "{name} is a landmark in {city}.",
    "{name} was completed in {year}.",
    "{name} was designed by {architect}.",
    "Visitors to {city} often photograph {name}.",
    "The history of {name} begins well before {year}.",
    "Restoration work on {name} continues to this day.",
    "{architect} is best known for {name}.",
    "{name} appears on many postcards from {city}.",
    "Tickets for {name} can be bought on site.",
    "At night {name} is lit up for visitors.",
]


def write_jsonl(name, rows):
    with open(os.path.join(HERE, name), "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def fake_image(tag):
    return ("P6\n" + tag + "\n").encode()


def main():
    os.makedirs(os.path.join(HERE, "images"), exist_ok=True)
    passages = []
    for eid, name, city, year, architect in ENTITIES:
        for i, facet in enumerate(FACETS):
            passages.append({
                "doc_id": f"t-{eid}-{i}",
                "title": name,
                "text": facet.format(name=name, city=city, year=year, architect=architect),
                "entity_id": eid,
            })
    write_jsonl("text_corpus.jsonl", passages)

    mm = []
    for eid, name, city, year, _ in ENTITIES:
        for view in range(2):
            image = f"images/{eid}-{view}.ppm"
            with open(os.path.join(HERE, image), "wb") as f:
                f.write(fake_image(f"{eid}-{view}"))
            mm.append({
                "doc_id": f"m-{eid}-{view}",
                "image_ref": image,
                "section_text": f"{name} in {city}, view {view}. Completed in {year}.",
                "entity_id": eid,
            })
    write_jsonl("mm_corpus.jsonl", mm)

    samples = []
    for n, (eid, name, city, year, architect) in enumerate(ENTITIES[:6]):
        # the question image is one of the KB views so the image half of the query matches
        image = f"images/{eid}-0.ppm"
        row = {
            "sample_id": f"toy-{n}",
            "image": image,
            "question": "When was this building completed?",
            "answers": [year],
            "entity_ids": [eid],
        }
        if n % 2 == 0:
            row["annotator_answers"] = [year] * 8 + ["unknown"] * 2
        samples.append(row)
    write_jsonl("samples.jsonl", samples)

    script = [
        {"key": {"kind": "initial-description"}, "response": "A tall landmark building photographed from street level."},
        {"key": {"kind": "query-expansion"}, "response": "When was this landmark building completed and who designed it?"},
        {"key": {"kind": "query-generation"},
         "response": "Question 1: When was the landmark completed?\nQuestion 2: Who designed the landmark?"},
        {"key": {"kind": "record-generation"}, "response": "The retrieved passages describe the landmark and its completion year."},
        {"key": {"kind": "final-answer"}, "response": "I am not sure."},
    ]
    # correct final answers for half of the samples so EM lands strictly between 0 and 1
    for n, (_, _, _, year, _) in enumerate(ENTITIES[:6]):
        if n % 2 == 0:
            script.append({"key": {"kind": "final-answer", "sample_id": f"toy-{n}"}, "response": year})
    write_jsonl("script.jsonl", script)

    config = {
        "iterations": 2,
        "budget": {"text_k": 6, "mm_k": 4},
        "answer_mode": "free-form",
        "kb_mode": "both",
        "parallelism": 2,
        "seed": 7,
        "paths": {
            "text_kb": "kb/text",
            "mm_kb": "kb/mm",
            "benchmark": "samples.jsonl",
            "image_root": ".",
            "output_dir": "out",
        },
        "text_embedder": {"kind": "deterministic-reference", "dim": 64},
        "image_embedder": {"kind": "deterministic-reference", "dim": 64},
        "llm": {"mode": "scripted", "script_path": "script.jsonl"},
    }
    with open(os.path.join(HERE, "config.json"), "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
