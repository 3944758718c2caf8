"""Simulated pick-and-place tasks, scripted experts and scoring."""
from .objects import (AREAS, COLORS, SHAPES, VALID_COLORS, InvalidObjectError, ObjectSpec,
                      sorting_target, valid_objects)
from .scenarios import (OrderingRules, Partition, Scenario, all_rule_combinations, annotate,
                        enumerate_ordering_scenarios, enumerate_sorting_scenarios,
                        enumerate_valid_orderings, nearest_to_reference_count, ordering_is_valid,
                        ordering_schema, schema_for, sorting_schema)
from .world import ActionError, SimConfig, WorldState, render, reset, step
from .scoring import MAX_SCORE, score, score_ordering, score_sorting
from .expert import ExpertPolicy, GenerationError, generate_dataset, plan, replay, scripted_expert
