# -*- coding: utf-8 -*-
import os
import json
import logging as log

from ..stage import utils as u


def write_report(report, outdir, reliability=None, class_reliability=None):
    """metrics.json, metrics.txt, confusion.csv, per_class.csv and the reliability CSVs under metrics/.

    :param class_reliability: dict class name -> ReliabilityBins, written as reliability_<name>.csv
    """
    metrics_dir = u.get_metrics_dir(outdir)
    if not os.path.exists(metrics_dir):
        os.makedirs(metrics_dir)
    with open(os.path.join(metrics_dir, 'metrics.json'), 'w') as f:
        json.dump(report.to_dict(), f, indent=2)
    with open(os.path.join(metrics_dir, 'metrics.txt'), 'w') as f:
        f.write(report.table())
    report.confusion.to_frame(report.class_names).to_csv(os.path.join(metrics_dir, 'confusion.csv'))
    report.per_class_frame().to_csv(os.path.join(metrics_dir, 'per_class.csv'), float_format='%.8g')
    if reliability is not None:
        reliability.to_frame().to_csv(os.path.join(metrics_dir, 'reliability.csv'), index=False, float_format='%.8g')
    for name, bins in (class_reliability or {}).items():
        bins.to_frame().to_csv(os.path.join(metrics_dir, 'reliability_%s.csv' % name), index=False,
                               float_format='%.8g')
    log.info('wrote metrics to %s', metrics_dir)
    return metrics_dir


def write_table(frame, outdir, name):
    metrics_dir = u.get_metrics_dir(outdir)
    if not os.path.exists(metrics_dir):
        os.makedirs(metrics_dir)
    path = os.path.join(metrics_dir, name)
    frame.to_csv(path, index=False, float_format='%.8g')
    return path
