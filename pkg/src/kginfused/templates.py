"""Prompt templates for every LLM stage.

Placeholders are ``{name}``; ``{{`` and ``}}`` stand for literal braces.
Bodies are pinned by checksum in the test suite, so edits here are
deliberate and must update the pins.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Mapping

_TOKEN = re.compile(r"\{\{|\}\}|\{([a-z_]+)\}")


class UnboundPlaceholderError(KeyError):
    def __init__(self, name: str) -> None:
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unbound placeholder {self.name}"


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for m in _TOKEN.finditer(self.body):
            if m.group(1):
                seen.setdefault(m.group(1))
        return tuple(seen)

    @property
    def checksum(self) -> str:
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()

    def render(self, bindings: Mapping[str, str]) -> str:
        return render(self, bindings)


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Substitute every placeholder; values are inserted verbatim, never re-scanned."""

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name is None:
            return m.group(0)[0]
        if name not in bindings:
            raise UnboundPlaceholderError(name)
        return str(bindings[name])

    return _TOKEN.sub(sub, template.body)


ANSWER_NOR = """Instructions

Only give me the answer and do not output any other words.

Question: {question}
Answer:"""

ANSWER_RAG = """Instructions

Answer the question based on the given passages. Only give me the answer and do not output any other words.

Passages:
{passages}

Question: {question}
Answer:"""

QE_VANILLA = """Instructions

Generate a new short query that is distinct from but closely related to the original question. This new query should aim to retrieve additional passages that fill in gaps or provide complementary knowledge necessary to thoroughly address the original question. Ensure the new query is relevant, precise, and broadens the scope of information tied to the original question. Only give me the new short query and do not output any other words.

Original Question:
{question}

New Query:"""

NOTE = """Instructions

Based on the provided document content, write a note. The note should integrate all relevant information from the original text that can help answer the specified question and form a coherent paragraph. Please ensure that the note includes all original text information useful for answering the question.

Question to be answered:
{question}

Document content:
{passages}

Note:"""

TRIPLE_SELECT = """Instructions

Given a question and a set of retrieved entity triples, select only the triples that are relevant to the question.

Information:
1. Each triple is in the form of <subject, predicate, object>.
2. The objects in the selected triples will be further explored in the next steps to gather additional relevant triples information.

Rules:
1. Only select triples from the retrieved set. Do not generate new triples.
2. A triple is relevant if it contains information about entities or relationships that are important for answering the question, either directly or indirectly.
  - For example, if the question asks about a specific person, include triples about that person's name, occupation, relationships, etc.
  - If the question asks about an event or entity, include related background information that can help answer the question.
3. Output triples exactly as they appear in angle brackets (<...>).

Question:
{question}

Retrieved Entity Triples:
{triples}

Selected Triples:"""

TRIPLE_UPDATE = """Instructions

Given a question, a set of previously selected entity triples that are relevant to the question, and a new set of retrieved entity triples, select only the triples from the new set of retrieved entity triples that expand or enhance the information provided by the previously selected triples to help address the question.

Information:
1. Each triple is in the form of <subject, predicate, object>.
2. The objects in the selected triples will be further explored in the next steps to gather additional relevant triples information.

Rules:
1. Only select triples from the new set of retrieved entity triples. Do not include duplicates of the previously selected triples or generate new triples.
2. A triple is considered relevant if it:
  - Provides new information that complements or builds upon the entities, relationships, or concepts in the previously selected triples, and
  - Helps to better address or provide context for answering the question.
3. Do not include triples that are unrelated to the question or do not expand on the previously selected triples.
4. Output triples exactly as they appear in angle brackets (<...>).

Question:
{question}

Previously Selected Triples:
{previous_selected_triples}

New Retrieved Entity Triples:
{new_retrieved_triples}

Selected Triples:"""

TRIPLE_SUMMARY = """Instructions

Given a question and a set of retrieved entity triples, write a summary that captures the key information from the triples. If the triples do not provide enough information to directly answer the question, still summarize the information provided in the triples, even if it does not directly relate to the question. Focus on presenting all available details, regardless of their direct relevance to the query, in a concise and informative way.

Question:
{question}

Selected Triples:
{selected_triples}

Summary:"""

QE_KG = """Instructions

Generate a new short query that is distinct from but closely related to the original question. This new query should leverage both the original question and the provided paragraph to retrieve additional passages that fill in gaps or provide complementary knowledge necessary to thoroughly address the original question. Ensure the new query is relevant, precise, and broadens the scope of information tied to the original question. Only give me the new short query and do not output any other words.

Original Question:
{question}

Related Paragraph:
{triples_summary}

New Query:"""

KA = """Instructions

You are an expert in text enhancement and fact integration. Given a question, a retrieved passage, and relevant factual information, your task is to improve the passage by seamlessly incorporating useful details from the factual information. Ensure that the enhanced passage remains coherent, well-structured, and directly relevant to answering the question. Preserve the original meaning while making the passage more informative. Avoid introducing unrelated content.

Question:
{question}

Retrieved Passage:
{passage}

Relevant Factual Information:
{triples_summary}

Enhanced passage:"""

DPO_JUDGE = """Instructions
Task: You will receive a list of enhanced passage outputs generated based on a given question, a retrieved passage, and relevant factual information (triples summary).
Your task is to evaluate and compare the outputs to identify the best and worst ones.

Rules:
1. Focus only on the final enhanced passage. Ignore any prefatory comments, explanations, or formatting differences that do not affect content.
2. The quality of an enhanced passage is determined by:
  - Integration: How well the factual information has been integrated into the passage.
  - Coherence: The passage should be logically structured, readable, and maintain a natural flow.
  - Relevance: The enhanced passage should directly support answering the question.
  - Accuracy: Factual information should be incorporated correctly without hallucination or distortion.
  - Preservation: The original passage’s meaning should be preserved and enhanced, not changed incorrectly.
3. If two outputs have substantially the same informational content (even if wording differs slightly), they are considered of equal quality.
4. If all outputs are of similar quality, or if no significant difference can be determined, use the same _id for both best and worst.

Input:
Question:
{question}

Retrieved Passage:
{passage}

Relevant Factual Information:
{facts}

Enhanced Passage Outputs:
{output}

Output format:

Output the result as a JSON object:
json {{"best_id": <_id of the highest-quality output>, "worst_id": <_id of the lowest-quality output>}}

Important:
Do not include any explanations, just the JSON output."""

SELF_ASK = """Instructions
Instruction: Answer through sequential questioning. Follow these rules:
1. Generate ONLY ONE new follow-up question per step
2. Each follow-up MUST use information from previous answers
3. NEVER repeat any form of follow-up question
4. When sufficient data is collected, give the final answer.

Format Template:
Follow up: [New specific question based on last answer]
Intermediate answer: [Concise fact from response]
... (repeat until conclusion)
So the final answer is: [Answer of the Original Question, only give me the answer and do not output any other words.]

Few-shot demonstrations
Question: Who lived longer, Muhammad Ali or Alan Turing?
Are follow up questions needed here: Yes.
Follow up: How old was Muhammad Ali when he died?
Intermediate answer: Muhammad Ali was 74 years old when he died.
Follow up: How old was Alan Turing when he died?
Intermediate answer: Alan Turing was 41 years old when he died.
So the final answer is: Muhammad Ali

Question: When was the founder of craigslist born?
Are follow up questions needed here: Yes.
Follow up: Who was the founder of craigslist?
Intermediate answer: Craigslist was founded by Craig Newmark.
Follow up: When was Craig Newmark born?
Intermediate answer: Craig Newmark was born on December 6, 1952.
So the final answer is: December 6, 1952

Question: Are both the directors of Jaws and Casino Royale from the same country?
Are follow up questions needed here: Yes.
Follow up: Who is the director of Jaws?
Intermediate answer: The director of Jaws is Steven Spielberg.
Follow up: Where is Steven Spielberg from?
Intermediate answer: The United States.
Follow up: Who is the director of Casino Royale?
Intermediate answer: The director of Casino Royale is Martin Campbell.
Follow up: Where is Martin Campbell from?
Intermediate answer: New Zealand.
So the final answer is: No

Question: Who was the maternal grandfather of George Washington?
Are follow up questions needed here: Yes.
Follow up: Who was the mother of George Washington?
Intermediate answer: The mother of George Washington was Mary Ball Washington.
Follow up: Who was the father of Mary Ball Washington?
Intermediate answer: The father of Mary Ball Washington was Joseph Ball.
So the final answer is: Joseph Ball

Question: {question}"""

TEMPLATES: dict[str, PromptTemplate] = {
    t.name: t
    for t in (
        PromptTemplate("answer_nor", ANSWER_NOR),
        PromptTemplate("answer_rag", ANSWER_RAG),
        PromptTemplate("qe_vanilla", QE_VANILLA),
        PromptTemplate("note", NOTE),
        PromptTemplate("triple_select", TRIPLE_SELECT),
        PromptTemplate("triple_update", TRIPLE_UPDATE),
        PromptTemplate("triple_summary", TRIPLE_SUMMARY),
        PromptTemplate("qe_kg", QE_KG),
        PromptTemplate("ka", KA),
        PromptTemplate("dpo_judge", DPO_JUDGE),
        PromptTemplate("self_ask", SELF_ASK),
    )
}


def get_template(name: str) -> PromptTemplate:
    try:
        return TEMPLATES[name]
    except KeyError:
        raise KeyError(f"unknown template {name!r}") from None
