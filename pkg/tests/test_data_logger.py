import json
import os

import numpy as np
import pytest

from utils.data_logger import RunLogger, format_value, load_summary, read_csv


def test_format_value():
    assert format_value(None) == ''
    assert format_value(0.1) == '0.1'
    assert float(format_value(np.float64(1 / 3))) == 1 / 3
    assert format_value(np.int64(7)) == '7'


def test_tables_and_manifest(tmp_path):
    out = str(tmp_path / 'run')
    logger = RunLogger(out, 'eval')
    logger.log_row('eval.csv', ['nfe', 'sw2'], {'nfe': 1, 'sw2': 0.25})
    logger.log_row('eval.csv', ['nfe', 'sw2'], {'nfe': 2})
    with pytest.raises(ValueError):
        logger.log_row('eval.csv', ['nfe', 'sw2'], {'fid': 1.0})
    logger.write_all()
    logger.save_summary({'rows': 2})
    manifest = logger.write_manifest('deadbeef', 5)

    rows = read_csv(os.path.join(out, 'eval.csv'))
    assert rows == [{'nfe': '1', 'sw2': '0.25'}, {'nfe': '2', 'sw2': ''}]
    assert manifest['files'] == ['eval.csv', 'summary.json']
    assert load_summary(os.path.join(out, 'summary.json')) == {'command': 'eval', 'rows': 2}
    with open(os.path.join(out, 'run_manifest.json'), encoding='utf-8') as f:
        assert json.load(f)['config_hash'] == 'deadbeef'


def test_load_summary_missing(tmp_path):
    assert load_summary(str(tmp_path / 'none.json')) is None
