from macrorealapp.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Count gates of the qubit cat-flip protocol across register sizes."
    experiment = "circuit_bench"
