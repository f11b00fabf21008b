from pathlib import Path
from typing import Optional, Sequence, Union

from langgraph.graph import StateGraph, END
from .state import AblationState
from .nodes import (
    coordinator_node,
    route_cells,
    cell_worker_node,
    aggregator_node,
    cell_flags
)
from .schemas.report import AblationTable
from .settings import DEFAULT_ABLATION_MATRIX, AblationSettings, RunConfig


def create_ablation_graph():
    workflow = StateGraph(AblationState)

    #================= Add nodes ==================
    workflow.add_node("coordinator", coordinator_node)
    workflow.add_node("cell_worker", cell_worker_node)
    workflow.add_node("aggregator", aggregator_node)

    #================ Define Flow =================
    workflow.set_entry_point("coordinator")

    # Coordinator -> one worker per ablation cell (PARALLEL)
    workflow.add_conditional_edges("coordinator", route_cells, ["cell_worker"])

    # Workers -> Aggregator
    workflow.add_edge("cell_worker", "aggregator")

    # Aggregator -> End
    workflow.add_edge("aggregator", END)
    app = workflow.compile()
    return app


def run_ablation(
    config: RunConfig,
    out_dir: Union[str, Path],
    data_dir: Optional[Union[str, Path]] = None,
    cells: Sequence[str] = DEFAULT_ABLATION_MATRIX,
    progress: bool = False,
) -> AblationTable:
    """Train and evaluate every cell on one shared dataset; returns the comparison table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cell in cells:
        AblationSettings.from_names(cell_flags(cell))
    full = config.with_ablation([])
    app = create_ablation_graph()
    initial_state: AblationState = {
        'config': full.model_dump(mode="json"),
        'base_config_hash': full.config_hash(),
        'data_dir': str(data_dir if data_dir is not None else out_dir / "data"),
        'out_dir': str(out_dir),
        'cells': list(cells),
        'progress': progress,
        'rows': [],
        'table': {},
        'run_status': []
    }
    final_state = app.invoke(initial_state)
    return AblationTable.model_validate(final_state['table'])
