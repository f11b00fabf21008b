from typing import Annotated, Any, Dict, List, TypedDict
import operator


class AblationState(TypedDict):
    config: Dict[str, Any]
    base_config_hash: str
    data_dir: str
    out_dir: str
    cells: List[str]
    progress: bool

    # One row per finished cell, appended by the parallel workers
    rows: Annotated[List[Dict[str, Any]], operator.add]

    # Final output
    table: Dict[str, Any]
    run_status: Annotated[List[str], operator.add]  # 'dataset_ready', '<cell>_completed', 'completed'


class CellState(TypedDict):
    config: Dict[str, Any]
    data_dir: str
    out_dir: str
    cell: str
    progress: bool
