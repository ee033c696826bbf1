def exit_code():
    '''
    Process exit codes
    '''
    code = {
        'SUCCESS': 0,
        'INTERNAL': 1,
        'CONFIG': 2,
        'DATA': 3,
        'NUMERICAL': 4,
    }
    return code
