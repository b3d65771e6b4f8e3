# -*- coding: utf-8 -*-
import logging as log
from collections import OrderedDict

import numpy as np

from ..errors import DataError


def aggregate_epoch_votes(chunk_probs, atol=1e-5):
    """Average the chunk softmax vectors of every epoch.

    :param chunk_probs: iterable of (block_id, prob) pairs; a prob may be empty
    :return: OrderedDict block_id -> (mean prob, class) in first-seen order;
        argmax ties go to the lower class index
    """
    grouped = OrderedDict()
    for block_id, prob in chunk_probs:
        rows = grouped.setdefault(block_id, [])
        prob = np.asarray(prob, dtype=np.float64)
        if prob.size == 0:
            continue
        if abs(prob.sum() - 1.0) > atol:
            raise DataError('chunk probabilities of %s sum to %.6f' % (block_id, prob.sum()))
        rows.append(prob)

    votes = OrderedDict()
    for block_id, rows in grouped.items():
        if not rows:
            log.warning('block %s has no chunk predictions, skipping it', block_id)
            continue
        mean = np.mean(rows, axis=0)
        votes[block_id] = (mean, int(np.argmax(mean)))
    return votes


def vote_windows(block_keys, probs, labels=None):
    """Epoch-level view of window predictions.

    :return: (block ids, mean probs [E,K], predicted classes [E], true classes [E] or None)
    """
    votes = aggregate_epoch_votes(zip(block_keys, probs))
    keys = list(votes)
    mean = np.array([votes[k][0] for k in keys]).reshape(len(keys), -1)
    pred = np.array([votes[k][1] for k in keys], dtype=np.int64)
    true = None
    if labels is not None:
        first = {}
        for key, label in zip(block_keys, labels):
            first.setdefault(key, int(label))
        true = np.array([first[k] for k in keys], dtype=np.int64)
    return keys, mean, pred, true


def voted_accuracy(block_keys, probs, labels):
    _, _, pred, true = vote_windows(block_keys, probs, labels)
    return float(np.mean(pred == true)) if len(pred) else 0.0
