import json
import numpy as np
import pytest

from nsiss import scenario
from nsiss.cli import main, canonical_json, run_scenario
from nsiss.errors import SchemaError


def whole_line():
    return dict(dim=1, fields={}, regions=[dict(label=1, constraints=[])])


def square(c=1.):
    return dict(form='power', c=c, p=2.)


def scalar_check(alpha_hi=1.):
    """ ẋ = −x + u with V = x². """
    return dict(kind='check', variant='main', seed=0,
                system=dict(partition=whole_line(), input_dim=1,
                            modes={'1': dict(form='linear', A=[[-1.]], B=[[1.]])}),
                certificate=dict(V=dict(partition='system', pieces={'1': dict(form='quadratic', Q=[[1.]])}),
                                 alpha_lo=square(), alpha_hi=square(alpha_hi), rho=square(), gamma=square(16.)),
                plan=dict(state_box=[-3., 3.], n_state=500, input_radius=1., n_input=16))


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_simulate_builtin(tmp_path, capsys):
    assert main(['simulate', 'sign1d', '--out', str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == 'PASS simulate'
    lines = (tmp_path / 'simulate_trajectory.csv').read_text().splitlines()
    assert lines[0] == 't,x1,active,event'
    report = json.loads((tmp_path / 'simulate_report.json').read_text())
    assert report['passed'] and report['kind'] == 'simulate'


def test_flower_builtin(tmp_path, capsys):
    assert main(['-q', 'flower', 'flower', '--out', str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == 'PASS flower'
    report = json.loads((tmp_path / 'flower_report.json').read_text())
    assert report['probe']['lie'] == dict(kind='empty')
    assert not report['clarke']['passed']


def test_reports_are_reproducible(tmp_path):
    for name in ('a', 'b'):
        assert main(['compose', 'cascade-linear', '--out', str(tmp_path / name), '--seed', '5']) == 0
    first = (tmp_path / 'a' / 'compose_report.json').read_bytes()
    assert first == (tmp_path / 'b' / 'compose_report.json').read_bytes()
    assert json.loads(first)['seed'] == 5


@pytest.mark.parametrize('name', sorted(scenario.BUILTINS))
def test_builtins_survive_json(tmp_path, name):
    path = write(tmp_path, name + '.json', scenario.BUILTINS[name])
    reloaded = scenario.load(path)
    assert reloaded == scenario.BUILTINS[name]
    _, report, _ = scenario.run(scenario.load(name))
    _, report_again, _ = scenario.run(reloaded)
    assert canonical_json(report) == canonical_json(report_again)


def test_failing_check(tmp_path, capsys):
    path = write(tmp_path, 'loose.json', scalar_check(alpha_hi=0.5))
    assert main(['check', path, '--out', str(tmp_path)]) == 1
    assert capsys.readouterr().out.strip() == 'FAIL check'
    report = json.loads((tmp_path / 'check_report.json').read_text())
    witnesses = report['check']['witnesses']
    assert witnesses and all(w['family'] == 'bounds' for w in witnesses)

    assert run_scenario(scalar_check(), out=None) == 0


def test_schema_errors(tmp_path, capsys):
    s = scalar_check()
    s['system']['partition']['regions'].append(dict(label=1, constraints=[]))
    assert main(['check', write(tmp_path, 'dup.json', s)]) == 2
    assert capsys.readouterr().out.startswith('ERROR')

    assert main(['lmi', 'sign1d']) == 2
    assert main(['check', str(tmp_path / 'missing.json')]) == 2
    bad = tmp_path / 'bad.json'
    bad.write_text('{"kind": ')
    assert main(['check', str(bad)]) == 2

    with pytest.raises(SchemaError):
        scenario.validate(dict(kind='check', system={}, certificate={}, plan={}, variant='fancy'))
    with pytest.raises(SchemaError):
        scenario.validate(dict(kind='teleport'))


def test_lmi_fixture(tmp_path):
    assert main(['lmi', write(tmp_path, 'lmi.json', dict(kind='lmi')), '--out', str(tmp_path)]) == 0
    report = json.loads((tmp_path / 'lmi_report.json').read_text())
    assert report['gains']['passed'] and report['observer']['passed']


def test_canonical_json():
    text = canonical_json(dict(b=np.inf, a=[1, 0.5, None, True], c=np.float64(-np.inf), d=np.nan))
    assert text == '{"a":[1,5.000000000000e-01,null,true],"b":"inf","c":"-inf","d":"nan"}\n'
