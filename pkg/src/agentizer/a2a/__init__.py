"""Agent-to-agent surface: skills, cards, the task service and the router."""

from agentizer.a2a.card import (
    CARD_PATH,
    DEFAULT_ENDPOINT,
    PROTOCOL_VERSION,
    AgentCard,
    AgentSkill,
    FieldSpec,
    card_path,
    card_schema,
    emit_agent_card,
    extract_skills,
    generate,
    load_card,
)
from agentizer.a2a.router import Binding, RouterPlan, RouterStep, heuristic_plan, route, to_data_url
from agentizer.a2a.service import AgentService, fetch_card, send_task, serve
from agentizer.a2a.wire import A2ARequest, A2AResponse, ResponseStatus

__all__ = [
    "A2ARequest",
    "A2AResponse",
    "AgentCard",
    "AgentService",
    "AgentSkill",
    "Binding",
    "CARD_PATH",
    "DEFAULT_ENDPOINT",
    "FieldSpec",
    "PROTOCOL_VERSION",
    "ResponseStatus",
    "RouterPlan",
    "RouterStep",
    "card_path",
    "card_schema",
    "emit_agent_card",
    "extract_skills",
    "fetch_card",
    "generate",
    "heuristic_plan",
    "load_card",
    "route",
    "send_task",
    "serve",
    "to_data_url",
]
