from physgnn.gradchecks import END_TO_END_TOL, PRIMITIVE_TOL, check_end_to_end, run_gradchecks


def test_small_suite_within_tolerance():
    rows = run_gradchecks("small")
    names = [r.name for r in rows]
    assert any(n.startswith("end_to_end") for n in names)
    for r in rows:
        tol = END_TO_END_TOL if r.name.startswith("end_to_end") else PRIMITIVE_TOL
        assert r.error < tol, (r.name, r.error)


def test_end_to_end_implicit_integrator():
    rows = check_end_to_end(seed=1, integrator="implicit_euler_cg")
    assert {r.name.split(",")[1] for r in rows} == {"task", "calibration"}
    assert max(r.error for r in rows) < END_TO_END_TOL
