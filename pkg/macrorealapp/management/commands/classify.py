from macrorealapp.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Decide whether a Hamiltonian keeps coarse observables classical."
    experiment = "classify"
