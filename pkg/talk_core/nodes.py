from pathlib import Path
from typing import Any, Dict, List

from langgraph.types import Send

from .pipeline import MANIFEST_FILE, evaluate, gen_data, train
from .schemas.report import METRIC_COLUMNS, AblationRow, AblationTable
from .settings import build_config, config_diff
from .state import AblationState, CellState


def cell_flags(cell: str) -> List[str]:
    """'full' -> [], 'no_contour' -> ['no_contour'], 'no_contour+no_motion' -> both."""
    return [] if cell == "full" else [f for f in cell.split("+") if f]


#========================= Node 1: COORDINATOR ===========================
def coordinator_node(state: AblationState) -> Dict[str, Any]:
    """
    Node makes sure the shared dataset exists before the cells start
    """
    print("\n" + "="*60)
    print("COORDINATOR: Preparing ablation run...")
    print("="*60)

    data_dir = Path(state['data_dir'])
    if (data_dir / MANIFEST_FILE).is_file():
        print(f" ---> Reusing dataset in {data_dir}")
    else:
        config = build_config(state['config'])
        manifest = gen_data(config, data_dir)
        print(f" ---> Generated {manifest.n_clips} clips into {data_dir}")

    print(f" ---> {len(state['cells'])} cells:")
    for cell in state['cells']:
        print(f"  - {cell}")

    return {
        'run_status': ['dataset_ready']
    }


def route_cells(state: AblationState) -> List[Send]:
    """Fan out one cell_worker per ablation cell"""
    return [
        Send("cell_worker", {
            'config': state['config'],
            'data_dir': state['data_dir'],
            'out_dir': state['out_dir'],
            'cell': cell,
            'progress': state['progress'],
        })
        for cell in state['cells']
    ]


#======================== Node 2: CELL Worker ==============================
def cell_worker_node(state: CellState) -> Dict[str, Any]:
    """
    Node trains and evaluates one ablation cell
    Parallel with the other cells
    """
    cell = state['cell']
    print("\n" + "="*60)
    print(f"CELL WORKER [{cell}]: Training and evaluating...")
    print("="*60)

    base = build_config(state['config']).with_ablation([])
    try:
        config = base.with_ablation(cell_flags(cell))
        cell_dir = Path(state['out_dir']) / cell
        trained = train(config, state['data_dir'], cell_dir / "checkpoint.mtkb", progress=state['progress'])
        report = evaluate(config, trained['checkpoint'], cell_dir / "report.json")
        row = AblationRow(
            cell=cell,
            flags=config.ablation.active(),
            config_hash=config.config_hash(),
            config_diff={k: list(v) for k, v in config_diff(base, config).items()},
            **report.row(),
        )
        print(f" ---> [{cell}] sync_corr={report.sync_corr} psnr={report.psnr}")
    except Exception as e:
        row = AblationRow(cell=cell, flags=cell_flags(cell), error=f"{type(e).__name__}: {e}")
        print(f" ---> [{cell}] failed: {row.error}")

    return {
        'rows': [row.model_dump(mode="json")],
        'run_status': [f'{cell}_completed']
    }


# ====================== Node 3: AGGREGATOR =================================
def aggregator_node(state: AblationState) -> Dict[str, Any]:
    """
    Node collects the cell rows into the comparison table, in matrix order
    """
    print("\n" + "="*60)
    print("AGGREGATOR: Building ablation table...")
    print("="*60)

    order = {cell: k for k, cell in enumerate(state['cells'])}
    rows = sorted((AblationRow.model_validate(r) for r in state.get('rows', [])), key=lambda r: order.get(r.cell, len(order)))
    table = AblationTable(base_config_hash=state['base_config_hash'], rows=rows)
    paths = table.write(state['out_dir'])

    failed = [r.cell for r in rows if r.error]
    print(f" ---> {len(rows) - len(failed)} cells completed, {len(failed)} failed")
    print(f" ---> Table saved to: {paths['table']}")
    for r in rows:
        values = ", ".join(f"{c}={getattr(r, c):.4f}" for c in METRIC_COLUMNS[:5] if getattr(r, c) is not None)
        print(f"  {r.cell}: {values or r.error}")

    return {
        'table': table.model_dump(mode="json"),
        'run_status': ['completed']
    }
