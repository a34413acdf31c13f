"""
Synthetic and CSV-backed tasks.
"""

from koss_ssm.tasks.copying import copying_accuracy, gen_copying_batch, gen_selective_copying
from koss_ssm.tasks.forecast import ForecastDataset, load_csv_dataset, windowize
