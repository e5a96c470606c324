#!/usr/bin/env python

"""
LangGraph factory for one protocol shot.

Both roles run the same graph::

    calibrate -> exchange -> estimate -> reconcile -> confirm -> amplify -> finalize

A phase that ends the shot sets ``status`` and the graph jumps straight to
``finalize``. The role-specific behavior lives on the node object passed in
``config["configurable"]["node"]``; bulk arrays stay in that node's shot
workspace and never enter the graph state.
"""

from collections.abc import Awaitable, Callable
from typing import TYPE_CHECKING, Any

from langchain_core.runnables import RunnableConfig
from langgraph.graph import END, StateGraph

from cvqkd_rt.basemodels import ShotState

if TYPE_CHECKING:
    from cvqkd_rt.engine import ProtocolNode

PHASES: tuple[str, ...] = ("calibrate", "exchange", "estimate", "reconcile", "confirm", "amplify")

PhaseFn = Callable[[ShotState, RunnableConfig], Awaitable[dict[str, Any]]]


def _node_from(config: RunnableConfig) -> "ProtocolNode":
    node = (config.get("configurable") or {}).get("node")
    if node is None:
        raise ValueError("shot graph needs the protocol node in config['configurable']['node']")
    return node


def _phase(name: str) -> PhaseFn:
    async def run(state: ShotState, config: RunnableConfig) -> dict[str, Any]:
        return await _node_from(config).run_phase(name, state)

    run.__name__ = name
    return run


async def finalize(state: ShotState, config: RunnableConfig) -> dict[str, Any]:
    """LangGraph node closing the shot: key deposit, record, ledger."""
    return await _node_from(config).finalize(state)


def _route_to(next_name: str) -> Callable[[ShotState], str]:
    def route(state: ShotState) -> str:
        return "finalize" if state.status is not None else next_name

    return route


def graph_factory():
    """
    Create the shot graph with an early exit from every phase to finalize.

    Returns:
        Compiled StateGraph ready for execution
    """
    graph = StateGraph(ShotState)
    for name in PHASES:
        graph.add_node(name, _phase(name))
    graph.add_node("finalize", finalize)

    successors = PHASES[1:] + ("finalize",)
    for name, next_name in zip(PHASES, successors, strict=True):
        graph.add_conditional_edges(
            name, _route_to(next_name), {next_name: next_name, "finalize": "finalize"}
        )
    graph.add_edge("finalize", END)
    graph.set_entry_point(PHASES[0])
    return graph.compile()


_SHOT_GRAPH = None


def get_shot_graph():
    global _SHOT_GRAPH
    if _SHOT_GRAPH is None:
        _SHOT_GRAPH = graph_factory()
    return _SHOT_GRAPH


async def run_shot_graph(node: "ProtocolNode", shot_id: int, v_mod: float) -> dict[str, Any]:
    """Run one shot of ``node`` through the graph and return the final state dict."""
    initial_state = ShotState(role=node.role, shot_id=shot_id, v_mod=v_mod)
    return await get_shot_graph().ainvoke(initial_state, config={"configurable": {"node": node}})
