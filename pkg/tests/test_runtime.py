import pytest
from hypothesis import given, settings, strategies as st

from forklab.enclave import codec
from forklab.enclave.crypto import make_provider
from forklab.enclave.program import EnclaveProgram, ProgramFault, ProgramRegistry, Rejected
from forklab.enclave.runtime import REPORT_DATA_SIZE, EnclaveRuntime
from forklab.errors import (
    CounterUnsupported,
    DeadInstance,
    DuplicateName,
    IntegrityFailure,
    PolicyViolation,
    UnknownMeasurement,
    UnknownPlatform,
)
from forklab.mitigations.stateless import StatelessPolicy, is_stateless, stateless_wrap
from forklab.protocols.contracts import Invocation, counter_contract, flip_contract, mixer_program


def echo_program(name: str = "echo", **kwargs) -> EnclaveProgram:
    def step(ctx, state, msg):
        if msg == "boom":
            raise ProgramFault("Boom", "asked to fail")
        return state, msg

    return EnclaveProgram(name=name, init=dict, step=step, **kwargs)


@pytest.fixture
def runtime(provider):
    rt = EnclaveRuntime(5, provider)
    rt.add_platform("P1")
    rt.add_platform("P2", counter_enabled=True)
    return rt


class TestRegistry:
    def test_measurement_is_a_descriptor_hash(self):
        reg = ProgramRegistry()
        m1 = reg.register(counter_contract("a"))
        m2 = reg.register(counter_contract("b"))
        assert m1 != m2
        assert reg.measurement_of("a") == m1
        assert reg.get(m1).name == "a"

    def test_same_program_registers_twice(self):
        reg = ProgramRegistry()
        assert reg.register(counter_contract()) == reg.register(counter_contract())

    def test_name_clash(self):
        reg = ProgramRegistry()
        reg.register(counter_contract("x", start=1))
        with pytest.raises(DuplicateName):
            reg.register(counter_contract("x", start=2))

    def test_different_code_under_the_same_descriptor(self):
        reg = ProgramRegistry()
        m = reg.register(echo_program("twin"))

        def shout(ctx, state, msg):
            return state, str(msg).upper()

        impostor = EnclaveProgram(name="twin", init=dict, step=shout)
        assert impostor.descriptor() == echo_program("twin").descriptor()
        with pytest.raises(DuplicateName):
            reg.register(impostor)
        assert reg.get(m).step is not shout

    def test_wrapped_programs_compare_their_inner_code(self):
        reg = ProgramRegistry()
        reg.register(stateless_wrap(echo_program("wrapped")))
        assert reg.register(stateless_wrap(echo_program("wrapped"))) == reg.measurement_of("wrapped")

        def other(ctx, state, msg):
            return state, None

        with pytest.raises(DuplicateName):
            reg.register(stateless_wrap(EnclaveProgram(name="wrapped", init=dict, step=other)))

    def test_unknown_measurement(self, runtime):
        from forklab.enclave.program import Measurement
        with pytest.raises(UnknownMeasurement):
            runtime.launch("P1", Measurement(b"\x00" * 32))


class TestLifecycle:
    def test_duplicate_platform(self, runtime):
        with pytest.raises(DuplicateName):
            runtime.add_platform("P1")

    def test_unknown_platform(self, runtime):
        m = runtime.register_program(echo_program())
        with pytest.raises(UnknownPlatform):
            runtime.launch("P9", m)

    def test_launch_starts_at_init(self, runtime):
        m = runtime.register_program(counter_contract(start=4))
        inst = runtime.launch("P1", m)
        assert inst.state == {"value": 4}
        assert inst.alive

    def test_step_and_fault(self, runtime):
        m = runtime.register_program(echo_program())
        inst = runtime.launch("P1", m)
        assert runtime.step(inst, "hi") == "hi"
        out = runtime.step(inst, "boom")
        assert isinstance(out, Rejected)
        assert out.code == "Boom"

    def test_dead_instance(self, runtime):
        m = runtime.register_program(echo_program())
        inst = runtime.launch("P1", m)
        runtime.terminate(inst)
        with pytest.raises(DeadInstance):
            runtime.step(inst, "hi")
        with pytest.raises(DeadInstance):
            runtime.seal(inst, b"x")

    def test_handles_are_unique(self, runtime):
        m = runtime.register_program(echo_program())
        handles = {runtime.launch("P1", m).handle for _ in range(5)}
        assert len(handles) == 5

    def test_checkpoint_only_on_change(self, runtime):
        m = runtime.register_program(counter_contract())
        inst = runtime.launch("P1", m)
        runtime.step(inst, Invocation("get"))
        assert inst.outbox == []
        runtime.step(inst, Invocation("increment"))
        assert len(inst.outbox) == 1

    def test_flip_contract(self, runtime):
        m = runtime.register_program(flip_contract())
        inst = runtime.launch("P1", m)
        assert runtime.step(inst, Invocation("toggle")) is True
        assert runtime.step(inst, Invocation("get")) is True

    def test_mixer_is_a_permutation(self, runtime):
        m = runtime.register_program(mixer_program())
        inst = runtime.launch("P1", m)
        out = runtime.step(inst, Invocation("mix", [1, 2, 3, 4, 5]))
        assert sorted(out) == [1, 2, 3, 4, 5]

    def test_ephemeral_keys_differ_per_launch(self, runtime):
        m = runtime.register_program(echo_program(ephemeral_keys=True))
        a, b = runtime.launch("P1", m), runtime.launch("P1", m)
        assert a.ephemeral.id != b.ephemeral.id


class TestSealing:
    def test_seal_round_trip(self, runtime):
        m = runtime.register_program(counter_contract())
        inst = runtime.launch("P1", m)
        blob = runtime.seal(inst, codec.encode({"value": 9}))
        other = runtime.launch("P1", m)
        assert runtime.restore_state(other, blob) == {"value": 9}

    def test_seq_hint_counts_per_binding(self, runtime):
        m = runtime.register_program(counter_contract())
        a, b = runtime.launch("P1", m), runtime.launch("P1", m)
        c = runtime.launch("P2", m)
        assert [runtime.seal(i, b"x").seq_hint for i in (a, b, c)] == [0, 1, 0]

    def test_other_platform_cannot_unseal(self, runtime):
        m = runtime.register_program(counter_contract())
        blob = runtime.seal(runtime.launch("P1", m), b"x")
        with pytest.raises(IntegrityFailure):
            runtime.unseal(runtime.launch("P2", m), blob)

    def test_other_program_cannot_unseal(self, runtime):
        m1 = runtime.register_program(counter_contract("one"))
        m2 = runtime.register_program(counter_contract("two"))
        blob = runtime.seal(runtime.launch("P1", m1), b"x")
        with pytest.raises(IntegrityFailure):
            runtime.unseal(runtime.launch("P1", m2), blob)

    @settings(max_examples=200, deadline=None)
    @given(
        seal_on=st.tuples(st.sampled_from(["P1", "P2", "P3"]), st.sampled_from(["a", "b"])),
        open_on=st.tuples(st.sampled_from(["P1", "P2", "P3"]), st.sampled_from(["a", "b"])),
        payload=st.binary(max_size=64),
    )
    def test_unseal_succeeds_exactly_on_the_same_binding(self, seal_on, open_on, payload):
        rt = EnclaveRuntime(1, make_provider("cryptography"))
        for p in ("P1", "P2", "P3"):
            rt.add_platform(p)
        programs = {n: rt.register_program(echo_program(n)) for n in ("a", "b")}
        blob = rt.seal(rt.launch(seal_on[0], programs[seal_on[1]]), payload)
        target = rt.launch(open_on[0], programs[open_on[1]])
        if seal_on == open_on:
            assert rt.unseal(target, blob) == payload
        else:
            with pytest.raises(IntegrityFailure):
                rt.unseal(target, blob)


class TestAttestation:
    def test_round_trip(self, runtime):
        inst = runtime.launch("P1", runtime.register_program(echo_program()))
        report = runtime.attest(inst, b"hello")
        assert runtime.verify_attestation(report)
        assert report.report_data[:5] == b"hello"
        assert len(report.report_data) == REPORT_DATA_SIZE

    def test_clones_are_indistinguishable(self, runtime):
        m = runtime.register_program(echo_program())
        a, b = runtime.launch("P1", m), runtime.launch("P1", m)
        assert runtime.attest(a, b"same") == runtime.attest(b, b"same")

    def test_report_data_limit(self, runtime):
        inst = runtime.launch("P1", runtime.register_program(echo_program()))
        with pytest.raises(ValueError):
            runtime.attest(inst, b"x" * 65)

    def test_forged_report_fails(self, runtime):
        from dataclasses import replace
        inst = runtime.launch("P1", runtime.register_program(echo_program()))
        report = runtime.attest(inst, b"hello")
        assert not runtime.verify_attestation(replace(report, report_data=b"\x00" * REPORT_DATA_SIZE))

    def test_unregistered_measurement_fails(self, runtime, provider):
        other = EnclaveRuntime(5, provider)
        other.add_platform("P1")
        inst = other.launch("P1", other.register_program(echo_program("stranger")))
        assert not runtime.verify_attestation(other.attest(inst, b""))


class TestCounters:
    def test_counter_service(self, runtime):
        assert runtime.increment_monotonic_counter("P2") == 1
        assert runtime.increment_monotonic_counter("P2") == 2
        assert runtime.read_monotonic_counter("P2") == 2

    def test_counter_disabled(self, runtime):
        with pytest.raises(CounterUnsupported):
            runtime.read_monotonic_counter("P1")
        with pytest.raises(CounterUnsupported):
            runtime.increment_monotonic_counter("P1")


class TestStatelessWrap:
    def test_refuses_persistent_programs(self):
        with pytest.raises(PolicyViolation):
            stateless_wrap(counter_contract(), StatelessPolicy())

    def test_state_never_changes(self, runtime):
        def step(ctx, state, msg):
            return {"seen": msg}, msg

        wrapped = stateless_wrap(EnclaveProgram(name="forgetful", init=dict, step=step))
        assert is_stateless(wrapped)
        inst = runtime.launch("P1", runtime.register_program(wrapped))
        assert runtime.step(inst, 3) == 3
        assert inst.state == {}
        assert inst.outbox == []

    def test_sealing_inside_a_step_is_refused(self, runtime):
        def step(ctx, state, msg):
            ctx.seal(codec.encode({"seen": msg}))
            return state, msg

        wrapped = stateless_wrap(EnclaveProgram(name="hoarder", init=dict, step=step))
        inst = runtime.launch("P1", runtime.register_program(wrapped))
        with pytest.raises(PolicyViolation, match="hoarder"):
            runtime.step(inst, 3)
        assert inst.outbox == []

    def test_configuration_may_be_resealed(self, runtime):
        def step(ctx, state, msg):
            ctx.seal(codec.encode(state))
            return state, ctx.platform_id

        program = EnclaveProgram(name="keeper", init=lambda: {"key": "k1"}, step=step)
        inst = runtime.launch("P1", runtime.register_program(stateless_wrap(program)))
        assert runtime.step(inst, "go") == "P1"
        assert len(inst.outbox) == 1

        strict = stateless_wrap(EnclaveProgram(name="strict", init=dict, step=step), StatelessPolicy(False))
        other = runtime.launch("P1", runtime.register_program(strict))
        with pytest.raises(PolicyViolation):
            runtime.step(other, "go")
