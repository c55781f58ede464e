from panel.dataset import (ClusterAssignment, DynamicNetworkSet, HyperParams, NetworkKind, PanelDataset,
                           PanelValidationError)
from panel.panel_io import load_panel, save_panel_binary, save_panel_csv
from panel.transforms import edge_index, edge_pair, fisher_transform, inverse_fisher
